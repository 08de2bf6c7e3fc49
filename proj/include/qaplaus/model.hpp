#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "qaplaus/tokenizer.hpp"

namespace qaplaus {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

// Which task heads participate in a loss.
struct TaskSet {
  bool qp = false;
  bool rp = false;
  bool ae = false;

  static TaskSet all() { return {true, true, true}; }
  /// Subset of {qp, rp, ae} joined by ',' or '+', e.g. "rp,ae".
  static TaskSet parse(std::string_view text);
  std::string to_string() const;
  bool any() const { return qp || rp || ae; }

  bool operator==(const TaskSet&) const = default;
};

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t hidden_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  double head_dropout = 0.5;
  TaskSet active_tasks = TaskSet::all();

  /// 12-layer, 768-wide encoder with a 30,522-token vocabulary: the size of
  /// the pretrained model the architecture mirrors.
  static ModelConfig reference();

  /// Throws ValidationError on an inconsistent configuration.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayerParams {
  Matrix query_weight, key_weight, value_weight, output_weight;  // D x D
  RowVector query_bias, key_bias, value_bias, output_bias;
  RowVector attention_norm_gain, attention_norm_bias;
  Matrix ffn_in_weight;  // D x F
  RowVector ffn_in_bias;
  Matrix ffn_out_weight;  // F x D
  RowVector ffn_out_bias;
  RowVector ffn_norm_gain, ffn_norm_bias;
};

// Non-owning view of one parameter tensor, row-major.
struct TensorRef {
  std::string name;
  double* data;
  std::size_t rows;
  std::size_t cols;

  std::size_t size() const { return rows * cols; }
  std::span<double> values() const { return {data, size()}; }
};

struct ConstTensorRef {
  std::string name;
  const double* data;
  std::size_t rows;
  std::size_t cols;

  std::size_t size() const { return rows * cols; }
  std::span<const double> values() const { return {data, size()}; }
};

struct ModelParams {
  Matrix token_embedding;     // V x D
  Matrix position_embedding;  // T_max x D
  Matrix segment_embedding;   // 2 x D
  RowVector embedding_norm_gain, embedding_norm_bias;
  std::vector<EncoderLayerParams> layers;
  Matrix pooler_weight;  // D x D
  RowVector pooler_bias;
  Matrix qp_weight;  // D x 2
  RowVector qp_bias;
  Matrix rp_weight;  // D x 2
  RowVector rp_bias;
  Matrix span_weight;  // D x 2: column 0 start logits, column 1 end logits
  RowVector span_bias;

  /// All tensors shaped for `config`, zero-filled.
  static ModelParams zeros(const ModelConfig& config);

  /// Tensors in declaration order (the checkpoint order).
  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  void set_zero();
};

/// Closed-form count of learnable scalars for a configuration.
std::size_t parameter_count(const ModelConfig& config);

/// Embeddings and affine weights ~ N(0, 0.02^2); biases zero; norm gains one.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

struct ModelOutput {
  std::array<double, 2> qp_prob{};  // {implausible, plausible}
  std::array<double, 2> rp_prob{};
  std::vector<double> start_dist;  // over all T positions, zero off-response
  std::vector<double> end_dist;
  Matrix hidden_states;  // T x D final block output; zero rows at padding
  // attention[layer][head] is n x n over the non-pad positions.
  std::vector<std::vector<Matrix>> attention;
};

/// Encoder plus the three heads for each element of the batch. Dropout is
/// applied to the pooled vector of both classification heads in train mode
/// only; `rng` is not touched in eval mode.
std::vector<ModelOutput> forward(const ModelParams& params, const ModelConfig& config,
                                 std::span<const TokenizedInput> batch, Mode mode, Rng& rng);

/// Most probable response-segment span: maximizes start[s] * end[e] with
/// s <= e and, when given, e - s + 1 <= max_answer_tokens. Ties go to the
/// smallest s, then the smallest e.
TokenSpan predict_span(const ModelOutput& output, const TokenizedInput& input,
                       std::optional<std::size_t> max_answer_tokens = std::nullopt);

/// Same decoding rule over raw distributions.
TokenSpan predict_span(std::span<const double> start_dist, std::span<const double> end_dist,
                       std::size_t response_begin, std::size_t response_end,
                       std::optional<std::size_t> max_answer_tokens = std::nullopt);

}  // namespace qaplaus
