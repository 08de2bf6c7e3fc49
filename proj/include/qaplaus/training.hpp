#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qaplaus/dataset.hpp"
#include "qaplaus/loss.hpp"
#include "qaplaus/model.hpp"
#include "qaplaus/tokenizer.hpp"

namespace qaplaus {

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 20;
  std::uint64_t seed = 13;
  TaskSet tasks = TaskSet::all();
  // Training stops once this many consecutive epochs fail to improve the
  // validation metric.
  std::size_t patience = 3;
  TaskWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// An example packed for the model together with its token-level labels.
struct EncodedExample {
  QAExample example;
  TokenizedInput input;
  TaskLabels labels;
};

std::vector<EncodedExample> encode_corpus(const std::vector<QAExample>& corpus, const Vocab& vocab,
                                          std::size_t max_len);

struct EvalMetrics {
  std::size_t count = 0;
  std::optional<double> qp_accuracy;
  std::optional<double> qp_auroc;
  std::optional<double> rp_accuracy;
  std::optional<double> rp_auroc;
  std::optional<double> ae_f1;           // over examples with a gold answer
  std::optional<double> ae_exact_match;  // same population
};

/// Eval-mode metrics for the heads in `tasks`. The span is decoded for every
/// example with a gold answer, regardless of the response score. AUROC is
/// left empty when the labels hold a single class.
EvalMetrics evaluate(const ModelParams& params, const ModelConfig& config,
                     const std::vector<EncodedExample>& examples, const TaskSet& tasks,
                     double threshold = 0.5);

/// Mean AUROC of the active classification heads (accuracy stands in when
/// AUROC is undefined); F1 when only answer extraction is active.
std::optional<double> selection_metric(const EvalMetrics& metrics, const TaskSet& tasks);

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelConfig& config, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);

  void step(ModelParams& params, const ModelParams& gradients);
  std::size_t steps() const { return steps_; }

 private:
  double learning_rate_, beta1_, beta2_, epsilon_;
  std::size_t steps_ = 0;
  ModelParams first_moment_, second_moment_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double total_loss = 0.0;
  double qp_loss = 0.0;
  double rp_loss = 0.0;
  double ae_loss = 0.0;
  EvalMetrics validation;
  std::optional<double> selection;
  bool improved = false;
};

struct TrainResult {
  ModelParams best_params;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string diagnostic;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Seeded minibatch Adam training with per-epoch validation and best-model
/// selection. With an empty validation set the lowest training loss wins.
TrainResult train(ModelParams params, const ModelConfig& config, const TrainConfig& train_config,
                  const std::vector<EncodedExample>& train_set, const std::vector<EncodedExample>& val_set,
                  const EpochCallback& on_epoch = {});

void write_epoch_log_csv(std::ostream& out, const std::vector<EpochLog>& log);

// ---------------------------------------------------------------------------
// Task-combination experiment grid.

struct GridVariant {
  std::string name;
  TaskSet tasks;
};

/// The five task combinations: QP, RP, AE, RP+AE, QP+RP+AE.
const std::vector<GridVariant>& grid_variants();

// Published full-scale results for the same five variants, for comparison
// only. Accuracies in percent.
struct ReferenceResult {
  std::string variant;
  std::optional<double> qp_acc, qp_auroc, rp_acc, rp_auroc, ae_f1;
};
const std::vector<ReferenceResult>& reference_results();

struct GridRow {
  GridVariant variant;
  EvalMetrics metrics;
  TrainResult training;
};

struct GridInputs {
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> val;
  std::vector<EncodedExample> test;
};

using VariantCallback = std::function<void(const GridRow&)>;

/// Trains every variant from the same initial parameters and seed, then
/// scores each on the test split with its own heads.
std::vector<GridRow> run_experiment_grid(const GridInputs& data, const ModelConfig& model_config,
                                         const TrainConfig& base, const VariantCallback& on_variant = {});

/// Columns variant,qp_acc,qp_auroc,rp_acc,rp_auroc,ae_f1; cells of heads a
/// variant does not train are empty.
void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);

}  // namespace qaplaus
