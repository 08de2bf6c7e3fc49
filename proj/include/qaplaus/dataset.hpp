#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qaplaus {

// Byte offsets into the UTF-8 response text, half-open [start, end).
struct AnswerSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const AnswerSpan&) const = default;
};

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// Model scores attached to records emitted by the cleaning pipeline.
struct ExampleScores {
  double qp = 0.0;
  double rp = 0.0;

  bool operator==(const ExampleScores&) const = default;
};

struct QAExample {
  std::string id;
  std::string question;
  std::string response;
  std::optional<bool> question_plausible;
  std::optional<bool> response_plausible;
  std::optional<AnswerSpan> answer;
  std::optional<Split> split;
  std::optional<ExampleScores> scores;

  bool operator==(const QAExample&) const = default;
};

/// Checks the record-level invariants: non-empty id/question/response, a
/// well-formed answer span inside the response, and answer => plausible
/// response. Throws ValidationError naming the field and the example id.
void validate_example(const QAExample& example);

/// The labelled answer substring, or an empty string when unlabelled.
std::string answer_text(const QAExample& example);

// Corpus JSONL. One object per line, keys in the order
// id, question, response, question_plausible, response_plausible, answer,
// split, scores. Unknown keys are rejected.
std::vector<QAExample> parse_corpus(std::istream& in);
std::vector<QAExample> load_corpus(const std::filesystem::path& path);
std::string to_jsonl(const QAExample& example);
void write_corpus(std::ostream& out, const std::vector<QAExample>& examples);
void write_corpus(const std::filesystem::path& path,
                  const std::vector<QAExample>& examples);

// ---------------------------------------------------------------------------
// Filtering rules applied at ingestion.

struct WhereFilterResult {
  std::vector<QAExample> kept;
  std::vector<QAExample> removed;
};

/// True when the first token of the lowercased, left-trimmed question is
/// exactly "where".
bool is_where_question(std::string_view question);

WhereFilterResult filter_where_questions(std::vector<QAExample> examples);

inline constexpr std::size_t kDefaultSpanCap = 5;

struct SpanCapVerdict {
  bool ok = true;
  std::size_t words = 0;  // word count of the labelled answer (0 if absent)
};

std::size_t count_words(std::string_view text);

/// Labelling-time answer length rule. Only meant for ingestion of labelled
/// data; predictions are never capped.
SpanCapVerdict enforce_label_span_cap(const QAExample& example,
                                      std::size_t cap = kDefaultSpanCap);

// ---------------------------------------------------------------------------
// Train/val/test split.

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplits {
  std::vector<QAExample> train;
  std::vector<QAExample> val;
  std::vector<QAExample> test;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

SplitSizes split_sizes(std::size_t n, const SplitFractions& fractions);

/// Seeded shuffle assigns examples to splits; each split keeps input order
/// and every record gets its `split` tag set.
CorpusSplits split_corpus(std::vector<QAExample> examples,
                          const SplitFractions& fractions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Class mix and synthetic corpora.

struct ClassProportions {
  double p_yy = 0.0;
  double p_yn = 0.0;
  double p_ny = 0.0;
  double p_nn = 0.0;

  /// Question/response label mix of the reference social-media corpus, in
  /// percent as published (sums to 100.1).
  static ClassProportions reference_mix();

  /// Scaled to sum to exactly one. Throws ValidationError on negative or
  /// all-zero input.
  ClassProportions normalized() const;
};

struct ClassCounts {
  std::size_t yy = 0;
  std::size_t yn = 0;
  std::size_t ny = 0;
  std::size_t nn = 0;

  std::size_t total() const { return yy + yn + ny + nn; }
  bool operator==(const ClassCounts&) const = default;
};

/// round(n * p) for the three minority classes; the remainder goes to Y/Y.
ClassCounts synth_class_counts(std::size_t n, const ClassProportions& proportions);

/// Counts labelled examples by (question_plausible, response_plausible).
/// Examples missing either label are ignored.
ClassCounts count_classes(const std::vector<QAExample>& examples);

/// Template-generated corpus where both plausibility labels and the answer
/// span are deterministic functions of the text. Requires n >= 4.
std::vector<QAExample> synth_corpus(std::size_t n, const ClassProportions& proportions,
                                    std::uint64_t seed);

}  // namespace qaplaus
