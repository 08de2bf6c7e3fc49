#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qaplaus/checkpoint.hpp"
#include "qaplaus/dataset.hpp"
#include "qaplaus/model.hpp"
#include "qaplaus/tokenizer.hpp"

namespace qaplaus {

struct PipelineConfig {
  double qp_threshold = 0.5;
  double rp_threshold = 0.5;
  std::optional<std::size_t> max_answer_tokens;  // unlimited when empty
  std::filesystem::path qp_checkpoint;           // single-task question model
  std::filesystem::path rpae_checkpoint;         // response + answer model
  std::filesystem::path vocab;

  void validate() const;
};

struct PredictionRecord {
  std::string id;
  double qp_score = 0.0;
  double rp_score = 0.0;
  bool question_verdict = false;
  bool response_verdict = false;
  std::optional<std::string> extracted_answer;
  std::optional<TokenSpan> answer_token_span;
  std::optional<AnswerSpan> answer_char_span;  // offsets into the response
};

std::string to_json(const PredictionRecord& record);

// Raw model outputs for one example, before thresholds are applied.
struct StageScores {
  double qp_score = 0.0;
  double rp_score = 0.0;
  std::vector<double> start_dist;
  std::vector<double> end_dist;
};

/// Applies the thresholds and, for a plausible response, decodes the answer
/// span from the stage-two distributions over `input`.
PredictionRecord decide(const QAExample& example, const TokenizedInput& input, const StageScores& scores,
                        const PipelineConfig& config);

/// A question-plausibility model followed by a response-plausibility and
/// answer-extraction model sharing one vocabulary. Both stages always run.
class TwoStagePipeline {
 public:
  TwoStagePipeline(Vocab vocab, Checkpoint question_model, Checkpoint response_model, PipelineConfig config);

  /// Loads the vocabulary and both checkpoints named in `config`.
  static TwoStagePipeline load(const PipelineConfig& config);

  PredictionRecord infer(const QAExample& example) const;
  StageScores score(const QAExample& example, TokenizedInput& response_input) const;

  const PipelineConfig& config() const { return config_; }
  void set_thresholds(double qp_threshold, double rp_threshold);
  const Vocab& vocab() const { return vocab_; }

 private:
  Vocab vocab_;
  Checkpoint question_model_;
  Checkpoint response_model_;
  PipelineConfig config_;
};

inline constexpr std::size_t kHistogramBins = 10;
using ScoreHistogram = std::array<std::size_t, kHistogramBins>;

/// Ten equal-width bins over [0, 1]; a score of exactly 1 lands in the last.
ScoreHistogram score_histogram(const std::vector<double>& scores);

struct AuditReport {
  ClassCounts counts;  // predicted verdict combinations
  std::size_t total = 0;
  std::size_t where_removed = 0;
  ScoreHistogram qp_hist{};
  ScoreHistogram rp_hist{};
  double qp_threshold = 0.5;
  double rp_threshold = 0.5;

  std::string to_json() const;
};

struct CleanResult {
  std::vector<QAExample> cleaned;
  std::vector<PredictionRecord> records;  // one per example kept by the where-filter
  AuditReport audit;
};

using Predictor = std::function<PredictionRecord(const QAExample&)>;

/// Where-filter, predict, and keep the examples with both verdicts true.
/// Cleaned records carry predicted labels, the extracted span and scores.
CleanResult clean_dataset(const std::vector<QAExample>& input, const Predictor& predict,
                          double qp_threshold, double rp_threshold);

CleanResult clean_dataset(const std::vector<QAExample>& input, const TwoStagePipeline& pipeline);

}  // namespace qaplaus
