#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "qaplaus/errors.hpp"
#include "qaplaus/loss.hpp"
#include "qaplaus/model.hpp"

namespace qaplaus {

namespace {

constexpr double kNormEps = 1e-12;

using Eigen::Index;

struct NormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

struct LayerTrace {
  Matrix input;  // n x D
  Matrix query, key, value;
  std::vector<Matrix> attention;  // per head, n x n
  Matrix context;
  NormCache attention_norm;
  Matrix attention_out;  // input to the FFN
  Matrix ffn_pre;        // n x F before GELU
  Matrix ffn_act;
  NormCache ffn_norm;
};

struct ExampleTrace {
  std::size_t n = 0;
  std::size_t response_begin = 0;
  std::size_t response_end = 0;
  NormCache embedding_norm;
  std::vector<LayerTrace> layers;
  Matrix final_hidden;  // n x D
  RowVector pooled;
  RowVector qp_mask, rp_mask;    // dropout scale per unit
  RowVector qp_input, rp_input;  // pooled vector after dropout
  ModelOutput output;
};

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, NormCache& cache) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  cache.inv_std = (var.array() + kNormEps).rsqrt();
  cache.normalized = centered.array().colwise() * cache.inv_std.array();
  Matrix y = cache.normalized.array().rowwise() * gain.array();
  y.rowwise() += bias;
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const RowVector& gain, const NormCache& cache,
                           RowVector& dgain, RowVector& dbias) {
  dgain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.array();
  const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
  const Eigen::VectorXd mean_dx = (dxhat.array() * cache.normalized.array()).rowwise().mean();
  dxhat.colwise() -= mean_d;
  dxhat.array() -= cache.normalized.array().colwise() * mean_dx.array();
  return dxhat.array().colwise() * cache.inv_std.array();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// Softmax over [begin, end) of a length-T vector; zero elsewhere.
std::vector<double> masked_softmax(const Eigen::VectorXd& logits, std::size_t begin, std::size_t end,
                                   std::size_t total) {
  std::vector<double> out(total, 0.0);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = begin; i < end; ++i) peak = std::max(peak, logits[static_cast<Index>(i)]);
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    out[i] = std::exp(logits[static_cast<Index>(i)] - peak);
    sum += out[i];
  }
  for (std::size_t i = begin; i < end; ++i) out[i] /= sum;
  return out;
}

std::array<double, 2> softmax2(const RowVector& logits) {
  const double peak = logits.maxCoeff();
  const double a = std::exp(logits[0] - peak), b = std::exp(logits[1] - peak);
  return {a / (a + b), b / (a + b)};
}

void check_finite(const Matrix& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

RowVector dropout_mask(Index size, double p, Mode mode, Rng& rng) {
  RowVector mask = RowVector::Ones(size);
  if (mode == Mode::eval || p <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < size; ++i) mask[i] = keep(rng) ? scale : 0.0;
  return mask;
}

void check_input(const TokenizedInput& input, const ModelConfig& config) {
  const std::size_t n = input.valid_length();
  if (input.length() > config.max_len)
    throw ValidationError("sequence length " + std::to_string(input.length()) + " exceeds max_len " +
                          std::to_string(config.max_len));
  if (n < 4 || input.token_ids[0] != kClsId || input.token_ids[n - 1] != kSepId)
    throw ValidationError("input is not a packed [CLS] q [SEP] r [SEP] sequence");
  for (std::size_t i = 0; i < n; ++i) {
    const int id = input.token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(config.vocab_size));
  }
  const std::size_t rb = input.response_begin();
  if (rb >= n - 1) throw ValidationError("input has no response tokens");
}

ExampleTrace run_example(const ModelParams& params, const ModelConfig& config,
                         const TokenizedInput& input, Mode mode, Rng& rng) {
  check_input(input, config);
  ExampleTrace tr;
  const std::size_t n = input.valid_length();
  const auto ni = static_cast<Index>(n);
  const auto D = static_cast<Index>(config.hidden_dim);
  const auto H = static_cast<Index>(config.num_heads);
  const Index dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  tr.n = n;
  tr.response_begin = input.response_begin();
  tr.response_end = input.response_end();

  // Padding positions are never attended to, so only the first n rows are
  // computed; their hidden states are reported as zero.
  Matrix x(ni, D);
  for (Index i = 0; i < ni; ++i) {
    x.row(i) = params.token_embedding.row(input.token_ids[static_cast<std::size_t>(i)]) +
               params.position_embedding.row(i) +
               params.segment_embedding.row(input.segment_ids[static_cast<std::size_t>(i)]);
  }
  x = layer_norm(x, params.embedding_norm_gain, params.embedding_norm_bias, tr.embedding_norm);
  check_finite(x, "embeddings");

  tr.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lp = params.layers[l];
    auto& lt = tr.layers[l];
    lt.input = x;
    lt.query = x * lp.query_weight;
    lt.query.rowwise() += lp.query_bias;
    lt.key = x * lp.key_weight;
    lt.key.rowwise() += lp.key_bias;
    lt.value = x * lp.value_weight;
    lt.value.rowwise() += lp.value_bias;

    lt.context.resize(ni, D);
    lt.attention.resize(static_cast<std::size_t>(H));
    for (Index h = 0; h < H; ++h) {
      Matrix scores = lt.query.middleCols(h * dh, dh) * lt.key.middleCols(h * dh, dh).transpose();
      scores *= scale;
      softmax_rows(scores);
      lt.context.middleCols(h * dh, dh) = scores * lt.value.middleCols(h * dh, dh);
      lt.attention[static_cast<std::size_t>(h)] = std::move(scores);
    }
    Matrix residual = lt.context * lp.output_weight;
    residual.rowwise() += lp.output_bias;
    residual += x;
    lt.attention_out = layer_norm(residual, lp.attention_norm_gain, lp.attention_norm_bias, lt.attention_norm);

    lt.ffn_pre = lt.attention_out * lp.ffn_in_weight;
    lt.ffn_pre.rowwise() += lp.ffn_in_bias;
    lt.ffn_act = lt.ffn_pre.unaryExpr(&gelu);
    Matrix ffn = lt.ffn_act * lp.ffn_out_weight;
    ffn.rowwise() += lp.ffn_out_bias;
    ffn += lt.attention_out;
    x = layer_norm(ffn, lp.ffn_norm_gain, lp.ffn_norm_bias, lt.ffn_norm);
    check_finite(x, "encoder layer " + std::to_string(l));
  }
  tr.final_hidden = x;

  RowVector pooled_pre = x.row(0) * params.pooler_weight + params.pooler_bias;
  tr.pooled = pooled_pre.array().tanh().matrix();
  tr.qp_mask = dropout_mask(D, config.head_dropout, mode, rng);
  tr.rp_mask = dropout_mask(D, config.head_dropout, mode, rng);
  tr.qp_input = tr.pooled.cwiseProduct(tr.qp_mask);
  tr.rp_input = tr.pooled.cwiseProduct(tr.rp_mask);

  const RowVector qp_logits = tr.qp_input * params.qp_weight + params.qp_bias;
  const RowVector rp_logits = tr.rp_input * params.rp_weight + params.rp_bias;
  Matrix span_logits = x * params.span_weight;
  span_logits.rowwise() += params.span_bias;
  if (!qp_logits.allFinite() || !rp_logits.allFinite() || !span_logits.allFinite())
    throw NumericError("non-finite activation in task heads");

  auto& out = tr.output;
  const std::size_t T = input.length();
  out.qp_prob = softmax2(qp_logits);
  out.rp_prob = softmax2(rp_logits);
  out.start_dist = masked_softmax(span_logits.col(0), tr.response_begin, tr.response_end, T);
  out.end_dist = masked_softmax(span_logits.col(1), tr.response_begin, tr.response_end, T);
  out.hidden_states = Matrix::Zero(static_cast<Index>(T), D);
  out.hidden_states.topRows(ni) = x;
  out.attention.reserve(tr.layers.size());
  for (const auto& lt : tr.layers) out.attention.push_back(lt.attention);
  return tr;
}

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return d == 0.0; });
}

void backprop_example(const ModelParams& params, const ModelConfig& config, const TokenizedInput& input,
                      const ExampleTrace& tr, const LogitGradients& g, ModelParams& grads) {
  const auto ni = static_cast<Index>(tr.n);
  const auto D = static_cast<Index>(config.hidden_dim);
  const auto H = static_cast<Index>(config.num_heads);
  const Index dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const bool has_qp = g.qp[0] != 0.0 || g.qp[1] != 0.0;
  const bool has_rp = g.rp[0] != 0.0 || g.rp[1] != 0.0;
  const bool has_span = !g.start.empty() && !(all_zero(g.start) && all_zero(g.end));
  if (!has_qp && !has_rp && !has_span) return;

  Matrix dx = Matrix::Zero(ni, D);

  if (has_qp || has_rp) {
    RowVector dpooled = RowVector::Zero(D);
    if (has_qp) {
      const RowVector dlogits = (RowVector(2) << g.qp[0], g.qp[1]).finished();
      grads.qp_weight.noalias() += tr.qp_input.transpose() * dlogits;
      grads.qp_bias += dlogits;
      dpooled += (dlogits * params.qp_weight.transpose()).cwiseProduct(tr.qp_mask);
    }
    if (has_rp) {
      const RowVector dlogits = (RowVector(2) << g.rp[0], g.rp[1]).finished();
      grads.rp_weight.noalias() += tr.rp_input.transpose() * dlogits;
      grads.rp_bias += dlogits;
      dpooled += (dlogits * params.rp_weight.transpose()).cwiseProduct(tr.rp_mask);
    }
    const RowVector dpre = dpooled.array() * (1.0 - tr.pooled.array().square());
    grads.pooler_weight.noalias() += tr.final_hidden.row(0).transpose() * dpre;
    grads.pooler_bias += dpre;
    dx.row(0) += dpre * params.pooler_weight.transpose();
  }

  if (has_span) {
    Matrix dspan(ni, 2);
    for (Index i = 0; i < ni; ++i) {
      dspan(i, 0) = g.start[static_cast<std::size_t>(i)];
      dspan(i, 1) = g.end[static_cast<std::size_t>(i)];
    }
    grads.span_weight.noalias() += tr.final_hidden.transpose() * dspan;
    grads.span_bias += dspan.colwise().sum();
    dx.noalias() += dspan * params.span_weight.transpose();
  }

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& lp = params.layers[l];
    auto& lg = grads.layers[l];
    const auto& lt = tr.layers[l];

    // Feed-forward sublayer.
    const Matrix dffn = layer_norm_backward(dx, lp.ffn_norm_gain, lt.ffn_norm, lg.ffn_norm_gain, lg.ffn_norm_bias);
    lg.ffn_out_weight.noalias() += lt.ffn_act.transpose() * dffn;
    lg.ffn_out_bias += dffn.colwise().sum();
    Matrix dpre = dffn * lp.ffn_out_weight.transpose();
    dpre.array() *= lt.ffn_pre.unaryExpr(&gelu_grad).array();
    lg.ffn_in_weight.noalias() += lt.attention_out.transpose() * dpre;
    lg.ffn_in_bias += dpre.colwise().sum();
    Matrix dattn_out = dffn;
    dattn_out.noalias() += dpre * lp.ffn_in_weight.transpose();

    // Self-attention sublayer.
    const Matrix dres = layer_norm_backward(dattn_out, lp.attention_norm_gain, lt.attention_norm,
                                            lg.attention_norm_gain, lg.attention_norm_bias);
    lg.output_weight.noalias() += lt.context.transpose() * dres;
    lg.output_bias += dres.colwise().sum();
    const Matrix dcontext = dres * lp.output_weight.transpose();

    Matrix dquery(ni, D), dkey(ni, D), dvalue(ni, D);
    for (Index h = 0; h < H; ++h) {
      const Matrix& attn = lt.attention[static_cast<std::size_t>(h)];
      const auto dctx_h = dcontext.middleCols(h * dh, dh);
      dvalue.middleCols(h * dh, dh) = attn.transpose() * dctx_h;
      const Matrix dattn = dctx_h * lt.value.middleCols(h * dh, dh).transpose();
      const Eigen::VectorXd row_dot = (dattn.array() * attn.array()).rowwise().sum();
      Matrix dscores = (dattn.colwise() - row_dot).cwiseProduct(attn);
      dscores *= scale;
      dquery.middleCols(h * dh, dh) = dscores * lt.key.middleCols(h * dh, dh);
      dkey.middleCols(h * dh, dh) = dscores.transpose() * lt.query.middleCols(h * dh, dh);
    }
    lg.query_weight.noalias() += lt.input.transpose() * dquery;
    lg.query_bias += dquery.colwise().sum();
    lg.key_weight.noalias() += lt.input.transpose() * dkey;
    lg.key_bias += dkey.colwise().sum();
    lg.value_weight.noalias() += lt.input.transpose() * dvalue;
    lg.value_bias += dvalue.colwise().sum();

    dx = dres;
    dx.noalias() += dquery * lp.query_weight.transpose();
    dx.noalias() += dkey * lp.key_weight.transpose();
    dx.noalias() += dvalue * lp.value_weight.transpose();
  }

  const Matrix demb = layer_norm_backward(dx, params.embedding_norm_gain, tr.embedding_norm,
                                          grads.embedding_norm_gain, grads.embedding_norm_bias);
  for (Index i = 0; i < ni; ++i) {
    const auto si = static_cast<std::size_t>(i);
    grads.token_embedding.row(input.token_ids[si]) += demb.row(i);
    grads.position_embedding.row(i) += demb.row(i);
    grads.segment_embedding.row(input.segment_ids[si]) += demb.row(i);
  }
}

}  // namespace

std::vector<ModelOutput> forward(const ModelParams& params, const ModelConfig& config,
                                 std::span<const TokenizedInput> batch, Mode mode, Rng& rng) {
  config.validate();
  std::vector<ModelOutput> outputs;
  outputs.reserve(batch.size());
  for (const auto& input : batch) outputs.push_back(std::move(run_example(params, config, input, mode, rng).output));
  return outputs;
}

BackwardResult backward(const ModelParams& params, const ModelConfig& config,
                        std::span<const TokenizedInput> batch, std::span<const TaskLabels> labels,
                        const TaskSet& tasks, const TaskWeights& weights, Mode mode, Rng& rng) {
  config.validate();
  if (labels.size() != batch.size()) throw ValidationError("batch and label counts differ");
  std::vector<ExampleTrace> traces;
  traces.reserve(batch.size());
  BackwardResult result;
  result.outputs.reserve(batch.size());
  for (const auto& input : batch) {
    traces.push_back(run_example(params, config, input, mode, rng));
    result.outputs.push_back(traces.back().output);
  }
  result.loss = compute_loss(result.outputs, labels, tasks, weights);
  if (!std::isfinite(result.loss.total)) throw NumericError("non-finite loss");
  const auto logit_grads = loss_logit_gradients(result.outputs, labels, tasks, weights);

  result.gradients = ModelParams::zeros(config);
  for (std::size_t b = 0; b < batch.size(); ++b)
    backprop_example(params, config, batch[b], traces[b], logit_grads[b], result.gradients);
  return result;
}

TokenSpan predict_span(std::span<const double> start_dist, std::span<const double> end_dist,
                       std::size_t response_begin, std::size_t response_end,
                       std::optional<std::size_t> max_answer_tokens) {
  if (response_begin >= response_end || response_end > start_dist.size() || response_end > end_dist.size())
    throw std::invalid_argument("predict_span needs at least one response token");
  const std::size_t width = max_answer_tokens.value_or(response_end - response_begin);
  if (width == 0) throw std::invalid_argument("max_answer_tokens must be >= 1");

  // For each end position the best start is the leftmost maximum of
  // start_dist over the admissible window, tracked with a monotone deque.
  std::deque<std::size_t> window;
  TokenSpan best{response_begin, response_begin};
  double best_score = -1.0;
  for (std::size_t e = response_begin; e < response_end; ++e) {
    while (!window.empty() && start_dist[window.back()] < start_dist[e]) window.pop_back();
    window.push_back(e);
    const std::size_t low = e + 1 >= response_begin + width ? e + 1 - width : response_begin;
    while (window.front() < low) window.pop_front();

    std::size_t s = window.front();
    double score = start_dist[s] * end_dist[e];
    // A zero product ties every admissible start; the leftmost one wins.
    if (score == 0.0) s = low;
    const bool better = score > best_score ||
                        (score == best_score && (s < best.start || (s == best.start && e < best.end)));
    if (better) {
      best_score = score;
      best = {s, e};
    }
  }
  return best;
}

TokenSpan predict_span(const ModelOutput& output, const TokenizedInput& input,
                       std::optional<std::size_t> max_answer_tokens) {
  return predict_span(output.start_dist, output.end_dist, input.response_begin(), input.response_end(),
                      max_answer_tokens);
}

}  // namespace qaplaus
