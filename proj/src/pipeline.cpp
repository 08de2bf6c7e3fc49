#include "qaplaus/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "qaplaus/errors.hpp"

namespace qaplaus {

void PipelineConfig::validate() const {
  auto in_open_unit = [](double t) { return t > 0.0 && t < 1.0; };
  if (!in_open_unit(qp_threshold) || !in_open_unit(rp_threshold))
    throw ValidationError("pipeline thresholds must lie in (0, 1)");
  if (max_answer_tokens && *max_answer_tokens == 0) throw ValidationError("max_answer_tokens must be >= 1");
}

std::string to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["qp_score"] = r.qp_score;
  j["rp_score"] = r.rp_score;
  j["question_verdict"] = r.question_verdict;
  j["response_verdict"] = r.response_verdict;
  j["extracted_answer"] = r.extracted_answer ? nlohmann::ordered_json(*r.extracted_answer) : nullptr;
  if (r.answer_token_span)
    j["answer_token_span"] = {r.answer_token_span->start, r.answer_token_span->end};
  else
    j["answer_token_span"] = nullptr;
  if (r.answer_char_span)
    j["answer_char_span"] = {{"start", r.answer_char_span->start}, {"end", r.answer_char_span->end}};
  else
    j["answer_char_span"] = nullptr;
  return j.dump();
}

PredictionRecord decide(const QAExample& example, const TokenizedInput& input, const StageScores& scores,
                        const PipelineConfig& config) {
  PredictionRecord r;
  r.id = example.id;
  r.qp_score = scores.qp_score;
  r.rp_score = scores.rp_score;
  r.question_verdict = scores.qp_score >= config.qp_threshold;
  r.response_verdict = scores.rp_score >= config.rp_threshold;
  if (r.response_verdict) {
    const TokenSpan span = predict_span(scores.start_dist, scores.end_dist, input.response_begin(),
                                        input.response_end(), config.max_answer_tokens);
    const CharRange range = token_span_to_char_range(input, span);
    r.answer_token_span = span;
    r.answer_char_span = AnswerSpan{range.start, range.end};
    r.extracted_answer = example.response.substr(range.start, range.end - range.start);
  }
  return r;
}

// ---------------------------------------------------------------------------

TwoStagePipeline::TwoStagePipeline(Vocab vocab, Checkpoint question_model, Checkpoint response_model,
                                   PipelineConfig config)
    : vocab_(std::move(vocab)),
      question_model_(std::move(question_model)),
      response_model_(std::move(response_model)),
      config_(std::move(config)) {
  config_.validate();
  const auto fp = vocab_.fingerprint();
  if (question_model_.vocab_fingerprint != fp || response_model_.vocab_fingerprint != fp)
    throw ValidationError("vocabulary fingerprint mismatch between checkpoints and vocabulary file");
  if (!question_model_.config.active_tasks.qp)
    throw ValidationError("stage-one checkpoint was not trained on question plausibility");
  if (!response_model_.config.active_tasks.rp || !response_model_.config.active_tasks.ae)
    throw ValidationError("stage-two checkpoint was not trained on response plausibility and answer extraction");
}

TwoStagePipeline TwoStagePipeline::load(const PipelineConfig& config) {
  return TwoStagePipeline(Vocab::load(config.vocab), load_checkpoint(config.qp_checkpoint),
                          load_checkpoint(config.rpae_checkpoint), config);
}

void TwoStagePipeline::set_thresholds(double qp_threshold, double rp_threshold) {
  PipelineConfig next = config_;
  next.qp_threshold = qp_threshold;
  next.rp_threshold = rp_threshold;
  next.validate();
  config_ = std::move(next);
}

StageScores TwoStagePipeline::score(const QAExample& example, TokenizedInput& response_input) const {
  Rng unused(0);
  StageScores s;
  {
    const auto input = encode_pair(example.question, example.response, vocab_, question_model_.config.max_len);
    const auto out = forward(question_model_.params, question_model_.config, std::span(&input, 1), Mode::eval, unused);
    s.qp_score = out.front().qp_prob[1];
  }
  response_input = encode_pair(example.question, example.response, vocab_, response_model_.config.max_len);
  auto out = forward(response_model_.params, response_model_.config, std::span(&response_input, 1), Mode::eval,
                     unused);
  s.rp_score = out.front().rp_prob[1];
  s.start_dist = std::move(out.front().start_dist);
  s.end_dist = std::move(out.front().end_dist);
  return s;
}

PredictionRecord TwoStagePipeline::infer(const QAExample& example) const {
  TokenizedInput input;
  const StageScores s = score(example, input);
  return decide(example, input, s, config_);
}

// ---------------------------------------------------------------------------

ScoreHistogram score_histogram(const std::vector<double>& scores) {
  ScoreHistogram hist{};
  for (double s : scores) {
    auto bin = static_cast<long>(std::floor(s * static_cast<double>(kHistogramBins)));
    bin = std::clamp<long>(bin, 0, static_cast<long>(kHistogramBins) - 1);
    ++hist[static_cast<std::size_t>(bin)];
  }
  return hist;
}

std::string AuditReport::to_json() const {
  nlohmann::ordered_json j;
  j["counts"] = {{"yy", counts.yy}, {"yn", counts.yn}, {"ny", counts.ny},
                 {"nn", counts.nn}, {"total", total}, {"where_removed", where_removed}};
  j["qp_hist"] = qp_hist;
  j["rp_hist"] = rp_hist;
  j["thresholds"] = {{"qp", qp_threshold}, {"rp", rp_threshold}};
  return j.dump();
}

CleanResult clean_dataset(const std::vector<QAExample>& input, const Predictor& predict, double qp_threshold,
                          double rp_threshold) {
  CleanResult result;
  auto filtered = filter_where_questions(input);
  result.audit.where_removed = filtered.removed.size();
  result.audit.qp_threshold = qp_threshold;
  result.audit.rp_threshold = rp_threshold;

  std::vector<double> qp_scores, rp_scores;
  for (const auto& ex : filtered.kept) {
    PredictionRecord r = predict(ex);
    qp_scores.push_back(r.qp_score);
    rp_scores.push_back(r.rp_score);
    auto& c = result.audit.counts;
    if (r.question_verdict && r.response_verdict) ++c.yy;
    else if (r.question_verdict) ++c.yn;
    else if (r.response_verdict) ++c.ny;
    else ++c.nn;

    if (r.question_verdict && r.response_verdict && r.answer_char_span) {
      QAExample cleaned = ex;
      cleaned.question_plausible = true;
      cleaned.response_plausible = true;
      cleaned.answer = r.answer_char_span;
      cleaned.scores = ExampleScores{r.qp_score, r.rp_score};
      result.cleaned.push_back(std::move(cleaned));
    }
    result.records.push_back(std::move(r));
  }
  result.audit.total = filtered.kept.size();
  result.audit.qp_hist = score_histogram(qp_scores);
  result.audit.rp_hist = score_histogram(rp_scores);
  return result;
}

CleanResult clean_dataset(const std::vector<QAExample>& input, const TwoStagePipeline& pipeline) {
  return clean_dataset(
      input, [&pipeline](const QAExample& ex) { return pipeline.infer(ex); }, pipeline.config().qp_threshold,
      pipeline.config().rp_threshold);
}

}  // namespace qaplaus
