#include "qaplaus/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "qaplaus/errors.hpp"
#include "qaplaus/metrics.hpp"

namespace qaplaus {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!tasks.any()) throw ValidationError("at least one task must be active");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("Adam betas must be in [0, 1)");
  if (!(epsilon > 0)) throw ValidationError("Adam epsilon must be > 0");
}

std::vector<EncodedExample> encode_corpus(const std::vector<QAExample>& corpus, const Vocab& vocab,
                                          std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    EncodedExample enc;
    enc.example = ex;
    try {
      enc.input = encode_pair(ex.question, ex.response, vocab, max_len);
    } catch (const ValidationError& e) {
      throw ValidationError("example '" + ex.id + "': " + e.what());
    }
    enc.labels = make_task_labels(ex, enc.input);
    out.push_back(std::move(enc));
  }
  return out;
}

EvalMetrics evaluate(const ModelParams& params, const ModelConfig& config,
                     const std::vector<EncodedExample>& examples, const TaskSet& tasks, double threshold) {
  EvalMetrics m;
  m.count = examples.size();
  if (examples.empty()) return m;

  std::vector<ScoredLabel> qp, rp;
  std::vector<std::pair<std::string, std::string>> spans;
  std::size_t exact = 0;
  Rng unused(0);
  for (const auto& enc : examples) {
    const auto out = forward(params, config, std::span(&enc.input, 1), Mode::eval, unused).front();
    if (tasks.qp && enc.example.question_plausible) qp.push_back({out.qp_prob[1], *enc.example.question_plausible});
    if (tasks.rp && enc.example.response_plausible) rp.push_back({out.rp_prob[1], *enc.example.response_plausible});
    if (tasks.ae && enc.example.answer) {
      const TokenSpan span = predict_span(out, enc.input);
      std::string predicted = token_span_to_substring(enc.input, enc.example.response, span);
      std::string gold = answer_text(enc.example);
      exact += exact_match(predicted, gold) ? 1 : 0;
      spans.emplace_back(std::move(predicted), std::move(gold));
    }
  }
  auto classification = [threshold](const std::vector<ScoredLabel>& items, std::optional<double>& acc,
                                    std::optional<double>& auc) {
    if (items.empty()) return;
    acc = accuracy(items, threshold);
    const bool both = std::any_of(items.begin(), items.end(), [](auto& s) { return s.label; }) &&
                      std::any_of(items.begin(), items.end(), [](auto& s) { return !s.label; });
    if (both) auc = auroc(items);
  };
  classification(qp, m.qp_accuracy, m.qp_auroc);
  classification(rp, m.rp_accuracy, m.rp_auroc);
  if (!spans.empty()) {
    m.ae_f1 = corpus_f1(spans);
    m.ae_exact_match = static_cast<double>(exact) / static_cast<double>(spans.size());
  }
  return m;
}

std::optional<double> selection_metric(const EvalMetrics& m, const TaskSet& tasks) {
  std::vector<double> parts;
  if (tasks.qp) {
    if (m.qp_auroc) parts.push_back(*m.qp_auroc);
    else if (m.qp_accuracy) parts.push_back(*m.qp_accuracy);
  }
  if (tasks.rp) {
    if (m.rp_auroc) parts.push_back(*m.rp_auroc);
    else if (m.rp_accuracy) parts.push_back(*m.rp_accuracy);
  }
  if (parts.empty() && tasks.ae && m.ae_f1) return m.ae_f1;
  if (parts.empty()) return std::nullopt;
  return std::accumulate(parts.begin(), parts.end(), 0.0) / static_cast<double>(parts.size());
}

// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const ModelConfig& config, double learning_rate, double beta1, double beta2,
                             double epsilon)
    : learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      first_moment_(ModelParams::zeros(config)),
      second_moment_(ModelParams::zeros(config)) {}

void AdamOptimizer::step(ModelParams& params, const ModelParams& gradients) {
  ++steps_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto p = params.tensors();
  const auto g = gradients.tensors();
  auto m = first_moment_.tensors();
  auto v = second_moment_.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double grad = g[t].data[i];
      double& m1 = m[t].data[i];
      double& m2 = v[t].data[i];
      m1 = beta1_ * m1 + (1.0 - beta1_) * grad;
      m2 = beta2_ * m2 + (1.0 - beta2_) * grad * grad;
      p[t].data[i] -= learning_rate_ * (m1 / correction1) / (std::sqrt(m2 / correction2) + epsilon_);
    }
  }
}

// ---------------------------------------------------------------------------

TrainResult train(ModelParams params, const ModelConfig& config, const TrainConfig& tc,
                  const std::vector<EncodedExample>& train_set, const std::vector<EncodedExample>& val_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  tc.validate();
  if (train_set.empty() && tc.max_epochs > 0) throw ValidationError("training set is empty");

  TrainResult result;
  result.best_params = params;
  AdamOptimizer optimizer(config, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
  Rng shuffle_rng(tc.seed);
  Rng dropout_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<double> best_score;
  double best_tiebreak = 0.0;
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    std::vector<TokenizedInput> inputs;
    std::vector<TaskLabels> labels;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
        const std::size_t end = std::min(order.size(), begin + tc.batch_size);
        inputs.clear();
        labels.clear();
        for (std::size_t k = begin; k < end; ++k) {
          inputs.push_back(train_set[order[k]].input);
          labels.push_back(train_set[order[k]].labels);
        }
        const auto step = backward(params, config, inputs, labels, tc.tasks, tc.weights, Mode::train, dropout_rng);
        const auto share = static_cast<double>(end - begin) / static_cast<double>(order.size());
        log.total_loss += share * step.loss.total;
        log.qp_loss += share * step.loss.qp_term;
        log.rp_loss += share * step.loss.rp_term;
        log.ae_loss += share * step.loss.ae_term;
        optimizer.step(params, step.gradients);
        if (!params.all_finite()) throw NumericError("parameters became non-finite");
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.diagnostic = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    if (!val_set.empty()) {
      log.validation = evaluate(params, config, val_set, tc.tasks);
      log.selection = selection_metric(log.validation, tc.tasks);
    } else {
      log.selection = -log.total_loss;
    }
    const double score = log.selection.value_or(-log.total_loss);
    // Exact ties go to the higher answer-extraction F1.
    const double tiebreak = tc.tasks.ae ? log.validation.ae_f1.value_or(0.0) : 0.0;
    if (!best_score || score > *best_score || (score == *best_score && tiebreak > best_tiebreak)) {
      best_score = score;
      best_tiebreak = tiebreak;
      result.best_params = params;
      result.best_epoch = epoch;
      log.improved = true;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!log.improved && stale_epochs >= tc.patience) break;
  }
  return result;
}

namespace {

std::string cell(const std::optional<double>& value) {
  if (!value) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *value);
  return buf;
}

std::string number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

}  // namespace

void write_epoch_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,total_loss,qp_loss,rp_loss,ae_loss,val_qp_acc,val_qp_auroc,val_rp_acc,val_rp_auroc,val_ae_f1,"
         "selection,improved\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << number(e.total_loss) << ',' << number(e.qp_loss) << ',' << number(e.rp_loss) << ','
        << number(e.ae_loss) << ',' << cell(e.validation.qp_accuracy) << ',' << cell(e.validation.qp_auroc) << ','
        << cell(e.validation.rp_accuracy) << ',' << cell(e.validation.rp_auroc) << ',' << cell(e.validation.ae_f1)
        << ',' << cell(e.selection) << ',' << (e.improved ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------

const std::vector<GridVariant>& grid_variants() {
  static const std::vector<GridVariant> kVariants = {
      {"qp", {true, false, false}},
      {"rp", {false, true, false}},
      {"ae", {false, false, true}},
      {"rp+ae", {false, true, true}},
      {"qp+rp+ae", {true, true, true}},
  };
  return kVariants;
}

const std::vector<ReferenceResult>& reference_results() {
  static const std::vector<ReferenceResult> kReference = {
      {"qp", 65.51, 0.7488, std::nullopt, std::nullopt, std::nullopt},
      {"rp", std::nullopt, std::nullopt, 64.62, 0.7674, std::nullopt},
      {"ae", std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0.568},
      {"rp+ae", std::nullopt, std::nullopt, 70.13, 0.7870, 0.665},
      {"qp+rp+ae", 63.90, 0.6803, 60.91, 0.6881, 0.6160},
  };
  return kReference;
}

std::vector<GridRow> run_experiment_grid(const GridInputs& data, const ModelConfig& model_config,
                                         const TrainConfig& base, const VariantCallback& on_variant) {
  std::vector<GridRow> rows;
  for (const auto& variant : grid_variants()) {
    ModelConfig mc = model_config;
    mc.active_tasks = variant.tasks;
    TrainConfig tc = base;
    tc.tasks = variant.tasks;
    GridRow row;
    row.variant = variant;
    row.training = train(init_params(mc, base.seed), mc, tc, data.train, data.val);
    const auto& eval_set = data.test.empty() ? data.val : data.test;
    row.metrics = evaluate(row.training.best_params, mc, eval_set, variant.tasks);
    if (on_variant) on_variant(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
  out << "variant,qp_acc,qp_auroc,rp_acc,rp_auroc,ae_f1\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    const auto& t = r.variant.tasks;
    auto opt = [](bool on, const std::optional<double>& v) { return on ? cell(v) : std::string(); };
    out << r.variant.name << ',' << opt(t.qp, m.qp_accuracy) << ',' << opt(t.qp, m.qp_auroc) << ','
        << opt(t.rp, m.rp_accuracy) << ',' << opt(t.rp, m.rp_auroc) << ',' << opt(t.ae, m.ae_f1) << '\n';
  }
}

}  // namespace qaplaus
