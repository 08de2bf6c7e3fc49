#include <algorithm>
#include <cmath>
#include <limits>

#include "qaplaus/errors.hpp"
#include "qaplaus/loss.hpp"

namespace qaplaus {

namespace {

double cross_entropy(double prob) { return -std::log(std::max(prob, std::numeric_limits<double>::min())); }

[[noreturn]] void missing(const TaskLabels& label, const char* what) {
  throw ValidationError("example '" + label.id + "': missing " + what + " label for an active task");
}

// Examples that feed the span term.
bool span_supervised(const TaskLabels& label) {
  if (label.response_plausible == false || label.span_lost) return false;
  if (!label.span) {
    missing(label, "answer span");
  }
  return true;
}

void check_lengths(std::span<const ModelOutput> outputs, std::span<const TaskLabels> labels) {
  if (outputs.size() != labels.size()) throw ValidationError("output and label counts differ");
}

void check_span(const TaskLabels& label, const ModelOutput& out) {
  const TokenSpan& s = *label.span;
  if (s.start > s.end || s.end >= out.start_dist.size())
    throw ValidationError("example '" + label.id + "': gold span lies outside the input");
}

}  // namespace

TaskLabels make_task_labels(const QAExample& example, const TokenizedInput& input) {
  TaskLabels labels;
  labels.id = example.id;
  labels.question_plausible = example.question_plausible;
  labels.response_plausible = example.response_plausible;
  if (example.answer) {
    labels.span = char_span_to_token_span(input, *example.answer);
    labels.span_lost = !labels.span.has_value();
  }
  return labels;
}

LossReport compute_loss(std::span<const ModelOutput> outputs, std::span<const TaskLabels> labels,
                        const TaskSet& tasks, const TaskWeights& weights) {
  check_lengths(outputs, labels);
  LossReport report;
  if (outputs.empty()) return report;
  const auto batch = static_cast<double>(outputs.size());

  if (tasks.qp) {
    double sum = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (!labels[i].question_plausible) missing(labels[i], "question plausibility");
      sum += cross_entropy(outputs[i].qp_prob[*labels[i].question_plausible ? 1 : 0]);
    }
    report.qp_term = sum / batch;
  }
  if (tasks.rp) {
    double sum = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (!labels[i].response_plausible) missing(labels[i], "response plausibility");
      sum += cross_entropy(outputs[i].rp_prob[*labels[i].response_plausible ? 1 : 0]);
    }
    report.rp_term = sum / batch;
  }
  if (tasks.ae) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (!span_supervised(labels[i])) {
        ++report.span_masked;
        continue;
      }
      const TokenSpan& s = *labels[i].span;
      check_span(labels[i], outputs[i]);
      sum += 0.5 * (cross_entropy(outputs[i].start_dist[s.start]) + cross_entropy(outputs[i].end_dist[s.end]));
      ++used;
    }
    report.ae_term = used > 0 ? sum / static_cast<double>(used) : 0.0;
  }
  report.total = weights.qp * report.qp_term + weights.rp * report.rp_term + weights.ae * report.ae_term;
  return report;
}

std::vector<LogitGradients> loss_logit_gradients(std::span<const ModelOutput> outputs,
                                                 std::span<const TaskLabels> labels, const TaskSet& tasks,
                                                 const TaskWeights& weights) {
  check_lengths(outputs, labels);
  std::vector<LogitGradients> grads(outputs.size());
  if (outputs.empty()) return grads;
  const auto batch = static_cast<double>(outputs.size());

  auto classification = [&](std::array<double, 2>& g, const std::array<double, 2>& prob, bool target,
                            double weight) {
    const double scale = weight / batch;
    g[0] = scale * (prob[0] - (target ? 0.0 : 1.0));
    g[1] = scale * (prob[1] - (target ? 1.0 : 0.0));
  };
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (tasks.qp) {
      if (!labels[i].question_plausible) missing(labels[i], "question plausibility");
      classification(grads[i].qp, outputs[i].qp_prob, *labels[i].question_plausible, weights.qp);
    }
    if (tasks.rp) {
      if (!labels[i].response_plausible) missing(labels[i], "response plausibility");
      classification(grads[i].rp, outputs[i].rp_prob, *labels[i].response_plausible, weights.rp);
    }
  }

  if (tasks.ae) {
    std::size_t used = 0;
    for (const auto& label : labels) used += span_supervised(label) ? 1 : 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (!span_supervised(labels[i])) continue;
      check_span(labels[i], outputs[i]);
      const TokenSpan& s = *labels[i].span;
      const double scale = 0.5 * weights.ae / static_cast<double>(used);
      auto& g = grads[i];
      g.start.resize(outputs[i].start_dist.size());
      g.end.resize(outputs[i].end_dist.size());
      for (std::size_t t = 0; t < g.start.size(); ++t) {
        g.start[t] = scale * (outputs[i].start_dist[t] - (t == s.start ? 1.0 : 0.0));
        g.end[t] = scale * (outputs[i].end_dist[t] - (t == s.end ? 1.0 : 0.0));
      }
    }
  }
  return grads;
}

}  // namespace qaplaus
