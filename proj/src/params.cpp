#include <algorithm>
#include <cmath>
#include <random>

#include "qaplaus/errors.hpp"
#include "qaplaus/model.hpp"

namespace qaplaus {

TaskSet TaskSet::parse(std::string_view text) {
  TaskSet tasks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find_first_of(",+", pos);
    if (comma == std::string_view::npos) comma = text.size();
    std::string_view item = text.substr(pos, comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "qp") tasks.qp = true;
    else if (item == "rp") tasks.rp = true;
    else if (item == "ae") tasks.ae = true;
    else throw ValidationError("unknown task '" + std::string(item) + "' (expected qp, rp or ae)");
    pos = comma + 1;
  }
  return tasks;
}

std::string TaskSet::to_string() const {
  std::string out;
  auto add = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out.push_back(',');
    out += name;
  };
  add(qp, "qp");
  add(rp, "rp");
  add(ae, "ae");
  return out;
}

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.num_layers = 12;
  c.num_heads = 12;
  c.hidden_dim = 768;
  c.ffn_dim = 3072;
  c.vocab_size = kReferenceVocabSize;
  c.max_len = 512;
  return c;
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ValidationError("model needs at least one layer");
  if (num_heads < 1) throw ValidationError("model needs at least one attention head");
  if (hidden_dim == 0 || hidden_dim % num_heads != 0)
    throw ValidationError("hidden_dim must be a positive multiple of num_heads");
  if (ffn_dim < 1) throw ValidationError("ffn_dim must be >= 1");
  if (vocab_size < kReservedTokens + 1) throw ValidationError("vocab_size must be >= 5");
  if (max_len < 5) throw ValidationError("max_len must be >= 5");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ValidationError("head_dropout must be in [0, 1)");
  if (!active_tasks.any()) throw ValidationError("at least one task must be active");
}

namespace {

template <typename Params, typename Ref, typename Out>
void collect(Params& p, Out& out) {
  auto add = [&out](std::string name, auto& t) {
    out.push_back(Ref{std::move(name), t.data(), static_cast<std::size_t>(t.rows()),
                      static_cast<std::size_t>(t.cols())});
  };
  add("token_embedding", p.token_embedding);
  add("position_embedding", p.position_embedding);
  add("segment_embedding", p.segment_embedding);
  add("embedding_norm_gain", p.embedding_norm_gain);
  add("embedding_norm_bias", p.embedding_norm_bias);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    add(prefix + "query_weight", layer.query_weight);
    add(prefix + "query_bias", layer.query_bias);
    add(prefix + "key_weight", layer.key_weight);
    add(prefix + "key_bias", layer.key_bias);
    add(prefix + "value_weight", layer.value_weight);
    add(prefix + "value_bias", layer.value_bias);
    add(prefix + "output_weight", layer.output_weight);
    add(prefix + "output_bias", layer.output_bias);
    add(prefix + "attention_norm_gain", layer.attention_norm_gain);
    add(prefix + "attention_norm_bias", layer.attention_norm_bias);
    add(prefix + "ffn_in_weight", layer.ffn_in_weight);
    add(prefix + "ffn_in_bias", layer.ffn_in_bias);
    add(prefix + "ffn_out_weight", layer.ffn_out_weight);
    add(prefix + "ffn_out_bias", layer.ffn_out_bias);
    add(prefix + "ffn_norm_gain", layer.ffn_norm_gain);
    add(prefix + "ffn_norm_bias", layer.ffn_norm_bias);
  }
  add("pooler_weight", p.pooler_weight);
  add("pooler_bias", p.pooler_bias);
  add("qp_weight", p.qp_weight);
  add("qp_bias", p.qp_bias);
  add("rp_weight", p.rp_weight);
  add("rp_bias", p.rp_bias);
  add("span_weight", p.span_weight);
  add("span_bias", p.span_bias);
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& c) {
  const auto D = static_cast<Eigen::Index>(c.hidden_dim);
  const auto F = static_cast<Eigen::Index>(c.ffn_dim);
  ModelParams p;
  p.token_embedding = Matrix::Zero(static_cast<Eigen::Index>(c.vocab_size), D);
  p.position_embedding = Matrix::Zero(static_cast<Eigen::Index>(c.max_len), D);
  p.segment_embedding = Matrix::Zero(2, D);
  p.embedding_norm_gain = RowVector::Zero(D);
  p.embedding_norm_bias = RowVector::Zero(D);
  p.layers.resize(c.num_layers);
  for (auto& layer : p.layers) {
    for (Matrix* m : {&layer.query_weight, &layer.key_weight, &layer.value_weight, &layer.output_weight})
      *m = Matrix::Zero(D, D);
    for (RowVector* v : {&layer.query_bias, &layer.key_bias, &layer.value_bias, &layer.output_bias,
                         &layer.attention_norm_gain, &layer.attention_norm_bias, &layer.ffn_out_bias,
                         &layer.ffn_norm_gain, &layer.ffn_norm_bias})
      *v = RowVector::Zero(D);
    layer.ffn_in_weight = Matrix::Zero(D, F);
    layer.ffn_in_bias = RowVector::Zero(F);
    layer.ffn_out_weight = Matrix::Zero(F, D);
  }
  p.pooler_weight = Matrix::Zero(D, D);
  p.pooler_bias = RowVector::Zero(D);
  p.qp_weight = Matrix::Zero(D, 2);
  p.qp_bias = RowVector::Zero(2);
  p.rp_weight = Matrix::Zero(D, 2);
  p.rp_bias = RowVector::Zero(2);
  p.span_weight = Matrix::Zero(D, 2);
  p.span_bias = RowVector::Zero(2);
  return p;
}

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  collect<ModelParams, TensorRef>(*this, out);
  return out;
}

std::vector<ConstTensorRef> ModelParams::tensors() const {
  std::vector<ConstTensorRef> out;
  collect<const ModelParams, ConstTensorRef>(*this, out);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors()) total += t.size();
  return total;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors())
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) std::fill(t.data, t.data + t.size(), 0.0);
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t D = c.hidden_dim, F = c.ffn_dim;
  const std::size_t embeddings = (c.vocab_size + c.max_len + 2) * D + 2 * D;
  const std::size_t attention = 4 * (D * D + D) + 2 * D;
  const std::size_t ffn = (D * F + F) + (F * D + D) + 2 * D;
  const std::size_t pooler = D * D + D;
  const std::size_t heads = 3 * (D * 2 + 2);
  return embeddings + c.num_layers * (attention + ffn) + pooler + heads;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p = ModelParams::zeros(config);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  };
  fill(p.token_embedding);
  fill(p.position_embedding);
  fill(p.segment_embedding);
  p.embedding_norm_gain.setOnes();
  for (auto& layer : p.layers) {
    fill(layer.query_weight);
    fill(layer.key_weight);
    fill(layer.value_weight);
    fill(layer.output_weight);
    layer.attention_norm_gain.setOnes();
    fill(layer.ffn_in_weight);
    fill(layer.ffn_out_weight);
    layer.ffn_norm_gain.setOnes();
  }
  fill(p.pooler_weight);
  fill(p.qp_weight);
  fill(p.rp_weight);
  fill(p.span_weight);
  return p;
}

}  // namespace qaplaus
