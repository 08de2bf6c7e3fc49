#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qaplaus/dataset.hpp"
#include "qaplaus/model.hpp"
#include "qaplaus/tokenizer.hpp"

namespace qaplaus {

// Per-example supervision in token space.
struct TaskLabels {
  std::string id;
  std::optional<bool> question_plausible;
  std::optional<bool> response_plausible;
  std::optional<TokenSpan> span;
  bool span_lost = false;  // answer labelled but truncated out of the input
};

TaskLabels make_task_labels(const QAExample& example, const TokenizedInput& input);

struct TaskWeights {
  double qp = 1.0;
  double rp = 1.0;
  double ae = 1.0;
};

struct LossReport {
  double total = 0.0;
  double qp_term = 0.0;
  double rp_term = 0.0;
  double ae_term = 0.0;
  std::size_t span_masked = 0;  // examples contributing nothing to ae_term
};

/// Mean cross-entropy for the active classification heads plus the span
/// term: per example 1/2 (CE(start) + CE(end)), averaged over the examples
/// whose response is plausible and whose span survived tokenization. Every
/// other example contributes exactly zero. `total` is the weighted sum of
/// the active terms; inactive terms stay 0.
LossReport compute_loss(std::span<const ModelOutput> outputs, std::span<const TaskLabels> labels,
                        const TaskSet& tasks, const TaskWeights& weights = {});

// d(total)/d(logits) for one example.
struct LogitGradients {
  std::array<double, 2> qp{};
  std::array<double, 2> rp{};
  std::vector<double> start;  // one entry per position; empty when unused
  std::vector<double> end;
};

std::vector<LogitGradients> loss_logit_gradients(std::span<const ModelOutput> outputs,
                                                 std::span<const TaskLabels> labels,
                                                 const TaskSet& tasks,
                                                 const TaskWeights& weights = {});

struct BackwardResult {
  ModelParams gradients;
  LossReport loss;
  std::vector<ModelOutput> outputs;
};

/// Forward pass, loss, and exact reverse-mode gradients for every
/// parameter. Parameters off every active task's path get exactly zero.
BackwardResult backward(const ModelParams& params, const ModelConfig& config,
                        std::span<const TokenizedInput> batch, std::span<const TaskLabels> labels,
                        const TaskSet& tasks, const TaskWeights& weights, Mode mode, Rng& rng);

}  // namespace qaplaus
