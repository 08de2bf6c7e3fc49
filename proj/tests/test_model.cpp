#include <doctest.h>

#include <cmath>
#include <numeric>

#include "qaplaus/errors.hpp"
#include "qaplaus/loss.hpp"
#include "qaplaus/model.hpp"
#include "support.hpp"

using namespace qaplaus;

namespace {

struct Fixture {
  std::vector<QAExample> corpus = synth_corpus(40, ClassProportions::reference_mix(), 2);
  Vocab vocab = build_vocab(corpus, 512);
  ModelConfig config = [this] {
    ModelConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.hidden_dim = 16;
    c.ffn_dim = 24;
    c.vocab_size = vocab.size();
    c.max_len = 40;
    return c;
  }();
  ModelParams params = qtest::spread_params(config, 5, 0.1);

  std::vector<TokenizedInput> batch(std::size_t count, std::size_t len) const {
    std::vector<TokenizedInput> out;
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(encode_pair(corpus[i].question, corpus[i].response, vocab, len));
    return out;
  }
};

// Row-wise layer norm with biased variance.
std::vector<double> normed(std::vector<double> v, double eps = 1e-12) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= double(v.size());
  for (double& x : v) x = (x - mean) / std::sqrt(var + eps);
  return v;
}

}  // namespace

TEST_CASE("forward output shapes and normalization") {
  Fixture f;
  const auto batch = f.batch(3, 24);
  Rng rng(1);
  const auto out = forward(f.params, f.config, batch, Mode::eval, rng);
  REQUIRE(out.size() == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& o = out[b];
    CHECK(o.start_dist.size() == 24);
    CHECK(o.end_dist.size() == 24);
    CHECK(o.hidden_states.rows() == 24);
    CHECK(o.hidden_states.cols() == 16);
    CHECK(o.attention.size() == 2);
    CHECK(o.attention[0].size() == 2);
    CHECK(o.qp_prob[0] + o.qp_prob[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(o.rp_prob[0] + o.rp_prob[1] == doctest::Approx(1.0).epsilon(1e-12));
    const double ss = std::accumulate(o.start_dist.begin(), o.start_dist.end(), 0.0);
    const double es = std::accumulate(o.end_dist.begin(), o.end_dist.end(), 0.0);
    CHECK(std::abs(ss - 1.0) < 1e-6);
    CHECK(std::abs(es - 1.0) < 1e-6);
    const auto& in = batch[b];
    for (std::size_t i = 0; i < in.length(); ++i) {
      if (i < in.response_begin() || i >= in.response_end()) {
        CHECK(o.start_dist[i] == 0.0);
        CHECK(o.end_dist[i] == 0.0);
      }
      if (in.pad_mask[i]) CHECK(o.hidden_states.row(static_cast<Eigen::Index>(i)).isZero(0.0));
    }
    for (const auto& head : o.attention[1])
      for (Eigen::Index r = 0; r < head.rows(); ++r) CHECK(head.row(r).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("eval mode is deterministic and leaves the rng alone") {
  Fixture f;
  const auto batch = f.batch(4, 32);
  Rng a(9), b(9);
  const auto first = forward(f.params, f.config, batch, Mode::eval, a);
  const auto second = forward(f.params, f.config, batch, Mode::eval, b);
  CHECK(a == Rng(9));
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].qp_prob == second[i].qp_prob);
    CHECK(first[i].rp_prob == second[i].rp_prob);
    CHECK(first[i].start_dist == second[i].start_dist);
    CHECK(first[i].end_dist == second[i].end_dist);
    CHECK(first[i].hidden_states == second[i].hidden_states);
  }
}

TEST_CASE("train mode applies head dropout") {
  Fixture f;
  const auto batch = f.batch(4, 32);
  Rng eval_rng(3), train_rng(3);
  const auto eval = forward(f.params, f.config, batch, Mode::eval, eval_rng);
  const auto train = forward(f.params, f.config, batch, Mode::train, train_rng);
  CHECK_FALSE(train_rng == Rng(3));
  bool differs = false;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    differs = differs || eval[i].qp_prob != train[i].qp_prob;
    // The span head sits on the encoder output, which has no dropout.
    CHECK(eval[i].start_dist == train[i].start_dist);
  }
  CHECK(differs);

  ModelConfig no_dropout = f.config;
  no_dropout.head_dropout = 0.0;
  Rng r(3);
  const auto plain = forward(f.params, no_dropout, batch, Mode::train, r);
  CHECK(r == Rng(3));
  CHECK(plain[0].qp_prob == eval[0].qp_prob);
}

TEST_CASE("attention weights match a hand-computed softmax") {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 1;
  c.hidden_dim = 4;
  c.ffn_dim = 4;
  c.vocab_size = 6;
  c.max_len = 5;
  ModelParams p = ModelParams::zeros(c);
  const double tok[6][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 2}};
  for (int r = 0; r < 6; ++r)
    for (int k = 0; k < 4; ++k) p.token_embedding(r, k) = tok[r][k];
  for (int r = 0; r < 5; ++r) p.position_embedding(r, r % 4) += 0.5;
  p.segment_embedding(1, 0) = 0.25;
  p.embedding_norm_gain.setOnes();
  auto& layer = p.layers[0];
  layer.query_weight.setIdentity();
  layer.key_weight.setIdentity();
  layer.key_weight(0, 1) = 0.5;
  layer.attention_norm_gain.setOnes();
  layer.ffn_norm_gain.setOnes();

  const auto input = qtest::packed({4}, {5}, 5);  // [CLS] q [SEP] r [SEP]
  Rng rng(0);
  const auto out = forward(p, c, std::span(&input, 1), Mode::eval, rng);
  const Matrix& attn = out[0].attention[0][0];
  REQUIRE(attn.rows() == 5);

  // x_i = LN(tok + pos + seg); q = x, k = x K; a = softmax(q k^T / 2).
  std::vector<std::vector<double>> x(5), k(5, std::vector<double>(4, 0.0));
  for (int i = 0; i < 5; ++i) {
    std::vector<double> e(4);
    for (int d = 0; d < 4; ++d)
      e[d] = tok[input.token_ids[i]][d] + (d == i % 4 ? 0.5 : 0.0) + (input.segment_ids[i] == 1 && d == 0 ? 0.25 : 0.0);
    x[i] = normed(e);
    for (int d = 0; d < 4; ++d) k[i][d] = x[i][d];
    k[i][1] += 0.5 * x[i][0];
  }
  for (int i = 0; i < 5; ++i) {
    std::vector<double> s(5);
    double total = 0.0;
    for (int j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (int d = 0; d < 4; ++d) dot += x[i][d] * k[j][d];
      s[j] = std::exp(dot / 2.0);
      total += s[j];
    }
    for (int j = 0; j < 5; ++j) CHECK(attn(i, j) == doctest::Approx(s[j] / total).epsilon(1e-12));
  }
}

TEST_CASE("appending padding changes no probability") {
  Fixture f;
  const auto short_batch = f.batch(5, 24);
  const auto long_batch = f.batch(5, 40);
  Rng rng(0);
  const auto a = forward(f.params, f.config, short_batch, Mode::eval, rng);
  const auto b = forward(f.params, f.config, long_batch, Mode::eval, rng);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i].qp_prob[1] - b[i].qp_prob[1]) <= 1e-6);
    CHECK(std::abs(a[i].rp_prob[1] - b[i].rp_prob[1]) <= 1e-6);
    for (std::size_t t = 0; t < 24; ++t) {
      CHECK(std::abs(a[i].start_dist[t] - b[i].start_dist[t]) <= 1e-6);
      CHECK(std::abs(a[i].end_dist[t] - b[i].end_dist[t]) <= 1e-6);
    }
    for (std::size_t t = 24; t < 40; ++t) CHECK(b[i].start_dist[t] == 0.0);
  }
}

TEST_CASE("permuting the batch permutes the outputs") {
  Fixture f;
  const auto batch = f.batch(6, 32);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<TokenizedInput> shuffled;
  for (auto i : perm) shuffled.push_back(batch[i]);
  Rng rng(0);
  const auto a = forward(f.params, f.config, batch, Mode::eval, rng);
  const auto b = forward(f.params, f.config, shuffled, Mode::eval, rng);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(b[k].qp_prob == a[perm[k]].qp_prob);
    CHECK(b[k].start_dist == a[perm[k]].start_dist);
  }
}

TEST_CASE("forward rejects malformed input") {
  Fixture f;
  auto batch = f.batch(1, 32);
  Rng rng(0);
  batch[0].token_ids[1] = static_cast<int>(f.config.vocab_size);
  CHECK_THROWS_AS(forward(f.params, f.config, batch, Mode::eval, rng), ValidationError);
  auto too_long = f.batch(1, 32);
  ModelConfig narrow = f.config;
  narrow.max_len = 16;
  CHECK_THROWS_AS(forward(f.params, narrow, too_long, Mode::eval, rng), ValidationError);
}

TEST_CASE("non-finite activations name the failing stage") {
  Fixture f;
  ModelParams p = f.params;
  p.layers[1].ffn_out_weight(0, 0) = std::numeric_limits<double>::infinity();
  const auto batch = f.batch(1, 32);
  Rng rng(0);
  CHECK_THROWS_WITH_AS(forward(p, f.config, batch, Mode::eval, rng), doctest::Contains("layer 1"), NumericError);
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.vocab_size = 10;
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.num_heads = 4;
  c.head_dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.head_dropout = 0.5;
  c.active_tasks = {};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(TaskSet::parse("rp,ae") == TaskSet{false, true, true});
  CHECK(TaskSet::parse("ae") == TaskSet{false, false, true});
  CHECK(TaskSet::parse("qp,rp,ae").to_string() == "qp,rp,ae");
  CHECK_THROWS_AS(TaskSet::parse("qp,xx"), ValidationError);
  CHECK_THROWS_AS(TaskSet::parse(""), ValidationError);
}

TEST_CASE("parameter count") {
  for (const auto& c : {qtest::tiny_config(TaskSet::all()), Fixture().config}) {
    CHECK(parameter_count(c) == ModelParams::zeros(c).parameter_count());
    std::size_t summed = 0;
    for (const auto& t : ModelParams::zeros(c).tensors()) summed += t.size();
    CHECK(summed == parameter_count(c));
  }
  const auto ref = ModelConfig::reference();
  const std::size_t V = 30522, T = 512, D = 768, F = 3072, L = 12;
  const std::size_t by_hand = (V + T + 2) * D + 2 * D +
                              L * (4 * (D * D + D) + 2 * D + (D * F + F) + (F * D + D) + 2 * D) +
                              (D * D + D) + 3 * (2 * D + 2);
  CHECK(parameter_count(ref) == by_hand);
  CHECK(parameter_count(ref) == 109486854);
  CHECK(std::abs(double(parameter_count(ref)) - 1.10e8) / 1.10e8 < 0.02);
}

TEST_CASE("init_params") {
  Fixture f;
  const auto a = init_params(f.config, 42);
  const auto b = init_params(f.config, 42);
  const auto c = init_params(f.config, 43);
  CHECK(a.token_embedding == b.token_embedding);
  CHECK(a.layers[1].ffn_out_weight == b.layers[1].ffn_out_weight);
  CHECK_FALSE(a.token_embedding == c.token_embedding);
  CHECK((a.embedding_norm_gain.array() == 1.0).all());
  for (const auto& layer : a.layers) {
    CHECK((layer.attention_norm_gain.array() == 1.0).all());
    CHECK((layer.ffn_norm_gain.array() == 1.0).all());
    CHECK(layer.query_bias.isZero(0.0));
  }
  CHECK(a.qp_bias.isZero(0.0));

  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (double v : init_params(f.config, 7).token_embedding.reshaped()) {
    sum += v;
    sq += v * v;
    ++n;
  }
  const double mean = sum / double(n);
  const double sd = std::sqrt(sq / double(n) - mean * mean);
  CHECK(std::abs(mean) < 0.003);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("inactive heads get exactly zero gradient") {
  const auto batch = qtest::tiny_batch();
  const auto labels = qtest::tiny_labels();
  for (const auto& [name, tasks] : qtest::tasksets()) {
    CAPTURE(name);
    const auto config = qtest::tiny_config(tasks);
    const auto params = qtest::spread_params(config, 3);
    Rng rng(0);
    const auto g = backward(params, config, batch, labels, tasks, {}, Mode::eval, rng).gradients;
    CHECK(g.qp_weight.isZero(0.0) == !tasks.qp);
    CHECK(g.qp_bias.isZero(0.0) == !tasks.qp);
    CHECK(g.rp_weight.isZero(0.0) == !tasks.rp);
    CHECK(g.span_weight.isZero(0.0) == !tasks.ae);
    CHECK(g.span_bias.isZero(0.0) == !tasks.ae);
    CHECK(g.pooler_weight.isZero(0.0) == !(tasks.qp || tasks.rp));
    CHECK_FALSE(g.token_embedding.isZero(0.0));
  }
}

TEST_CASE("gradients agree with central differences") {
  const auto batch = qtest::tiny_batch();
  const auto labels = qtest::tiny_labels();
  for (const auto& [name, tasks] : qtest::tasksets()) {
    CAPTURE(name);
    const auto config = qtest::tiny_config(tasks);
    const auto params = qtest::spread_params(config, 11);
    const auto check = qtest::finite_difference_check(params, config, batch, labels, tasks);
    CAPTURE(check.worst);
    CHECK(check.checked == parameter_count(config));
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("saturated head has a stationary bias") {
  const TaskSet tasks{true, false, false};
  auto config = qtest::tiny_config(tasks);
  auto params = qtest::spread_params(config, 2, 0.05);
  params.qp_weight.setZero();
  params.qp_bias << -40.0, 40.0;
  std::vector<TaskLabels> labels = qtest::tiny_labels();
  for (auto& l : labels) l.question_plausible = true;
  Rng rng(0);
  const auto g = backward(params, config, qtest::tiny_batch(), labels, tasks, {}, Mode::eval, rng).gradients;
  CHECK(g.qp_bias.cwiseAbs().maxCoeff() < 1e-30);
}

TEST_CASE("predict_span") {
  const std::size_t T = 10, rb = 4, re = 9;
  auto peaked = [&](std::size_t at) {
    std::vector<double> d(T, 0.0);
    for (std::size_t i = rb; i < re; ++i) d[i] = 0.01;
    d[at] = 1.0 - 0.01 * double(re - rb - 1);
    return d;
  };
  CHECK(predict_span(peaked(5), peaked(7), rb, re) == TokenSpan{5, 7});
  CHECK(predict_span(peaked(6), peaked(6), rb, re) == TokenSpan{6, 6});

  // Crossing peaks: start after end.
  const auto start = peaked(7), end = peaked(5);
  CHECK(predict_span(start, end, rb, re) == qtest::exhaustive_span(start, end, rb, re));

  // Mass on question tokens is never selected.
  std::vector<double> q(T, 0.0);
  q[1] = 0.9;
  q[6] = 0.1;
  const auto s = predict_span(q, q, rb, re);
  CHECK(s.start >= rb);
  CHECK(s.end < re);
  CHECK(s == TokenSpan{6, 6});

  // Length cap.
  CHECK(predict_span(peaked(4), peaked(8), rb, re, 2) == qtest::exhaustive_span(peaked(4), peaked(8), rb, re, 2));

  // All-zero distributions fall back to the first response token.
  const std::vector<double> zero(T, 0.0);
  CHECK(predict_span(zero, zero, rb, re) == TokenSpan{rb, rb});

  // Ties go to the smallest start, then the smallest end.
  std::vector<double> flat(T, 0.0);
  for (std::size_t i = rb; i < re; ++i) flat[i] = 0.2;
  CHECK(predict_span(flat, flat, rb, re) == TokenSpan{rb, rb});

  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(T), b(T);
    for (std::size_t i = 0; i < T; ++i) {
      a[i] = trial % 2 ? u(rng) : coarse(rng) / 3.0;
      b[i] = trial % 2 ? u(rng) : coarse(rng) / 3.0;
    }
    const std::optional<std::size_t> cap = trial % 3 == 0 ? std::optional<std::size_t>(1 + trial % 4) : std::nullopt;
    CHECK(predict_span(a, b, rb, re, cap) == qtest::exhaustive_span(a, b, rb, re, cap));
  }
}
