#pragma once

// Independent reference implementations and fixtures shared by the unit and
// acceptance tests. Nothing here calls the library routine it is checking.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "qaplaus/loss.hpp"
#include "qaplaus/metrics.hpp"
#include "qaplaus/model.hpp"
#include "qaplaus/tokenizer.hpp"

namespace qtest {

using namespace qaplaus;

// ---------------------------------------------------------------------------
// Metric oracles.

inline double pairwise_auroc(const std::vector<ScoredLabel>& items) {
  double wins = 0.0;
  double pairs = 0.0;
  for (const auto& p : items) {
    if (!p.label) continue;
    for (const auto& n : items) {
      if (n.label) continue;
      pairs += 1.0;
      if (p.score > n.score) wins += 1.0;
      else if (p.score == n.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double counted_accuracy(const std::vector<ScoredLabel>& items, double threshold) {
  int hits = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const bool predicted = !(items[i].score < threshold);
    if (predicted == items[i].label) hits++;
  }
  return double(hits) / double(items.size());
}

// Token counting the long way: strip punctuation character by character,
// lowercase, then split on any whitespace.
inline std::vector<std::string> hand_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::ispunct(c)) continue;
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double hand_f1(const std::string& predicted, const std::string& gold) {
  const auto p = hand_tokens(predicted);
  const auto g = hand_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<bool> used(g.size(), false);
  int common = 0;
  for (const auto& w : p) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!used[j] && g[j] == w) {
        used[j] = true;
        common++;
        break;
      }
    }
  }
  if (common == 0) return 0.0;
  const double precision = double(common) / double(p.size());
  const double recall = double(common) / double(g.size());
  return 2 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Span decoding oracle: every (s, e) pair, first strict maximum wins.

inline TokenSpan exhaustive_span(const std::vector<double>& start, const std::vector<double>& end,
                                 std::size_t begin, std::size_t stop,
                                 std::optional<std::size_t> cap = std::nullopt) {
  TokenSpan best{begin, begin};
  double best_score = -1.0;
  for (std::size_t s = begin; s < stop; ++s) {
    for (std::size_t e = s; e < stop; ++e) {
      if (cap && e - s + 1 > *cap) continue;
      const double score = start[s] * end[e];
      if (score > best_score) {
        best_score = score;
        best = {s, e};
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Character-level aligner: scans the raw response for each maximal run of
// word bytes or a single punctuation byte and returns the byte ranges, which
// is what tokenization must reproduce.

inline std::vector<CharRange> brute_force_pieces(const std::string& text) {
  std::vector<CharRange> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 128 && std::isspace(c)) {
      ++i;
    } else if (c < 128 && std::ispunct(c)) {
      pieces.push_back({i, i + 1});
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size()) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (d < 128 && (std::isspace(d) || std::ispunct(d))) break;
        ++j;
      }
      pieces.push_back({i, j});
      i = j;
    }
  }
  return pieces;
}

// Smallest union of whole pieces covering [start, end).
inline std::string brute_force_cover(const std::string& text, std::size_t start, std::size_t end) {
  std::size_t lo = std::string::npos, hi = 0;
  for (const auto& piece : brute_force_pieces(text)) {
    if (piece.end > start && piece.start < end) {
      lo = std::min(lo, piece.start);
      hi = std::max(hi, piece.end);
    }
  }
  if (lo == std::string::npos) return {};
  return text.substr(lo, hi - lo);
}

// ---------------------------------------------------------------------------
// Tiny hand-built fixtures for gradient checks (T = 6 is below the packing
// minimum, so sequences are laid out directly).

inline TokenizedInput packed(std::vector<int> question, std::vector<int> response, std::size_t length) {
  TokenizedInput in;
  auto push = [&](int id, int segment, std::optional<CharRange> range) {
    in.token_ids.push_back(id);
    in.segment_ids.push_back(segment);
    in.pad_mask.push_back(false);
    in.response_char_spans.push_back(range);
  };
  push(kClsId, 0, std::nullopt);
  for (int id : question) push(id, 0, std::nullopt);
  push(kSepId, 0, std::nullopt);
  std::size_t offset = 0;
  for (int id : response) {
    push(id, 1, CharRange{offset, offset + 1});
    offset += 2;
  }
  push(kSepId, 1, std::nullopt);
  while (in.token_ids.size() < length) {
    in.token_ids.push_back(kPadId);
    in.segment_ids.push_back(0);
    in.pad_mask.push_back(true);
    in.response_char_spans.push_back(std::nullopt);
  }
  return in;
}

inline ModelConfig tiny_config(TaskSet tasks) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 1;
  c.hidden_dim = 8;
  c.ffn_dim = 16;
  c.vocab_size = 12;
  c.max_len = 6;
  c.active_tasks = tasks;
  return c;
}

// Parameters far enough from the tiny initialization that every
// nonlinearity is exercised.
inline ModelParams spread_params(const ModelConfig& config, std::uint64_t seed, double scale = 0.4) {
  ModelParams p = init_params(config, seed);
  Rng rng(seed + 1);
  std::normal_distribution<double> noise(0.0, scale);
  for (auto& t : p.tensors())
    for (double& v : t.values()) v += noise(rng);
  return p;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences on the total loss for every scalar parameter.
// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps exactly-zero
// gradients (e.g. key biases, which softmax cancels) from dividing rounding
// noise by itself.
inline GradientCheck finite_difference_check(const ModelParams& params, const ModelConfig& config,
                                             const std::vector<TokenizedInput>& batch,
                                             const std::vector<TaskLabels>& labels, const TaskSet& tasks,
                                             double step = 1e-5, double floor = 1e-6) {
  Rng rng(0);
  const auto analytic = backward(params, config, batch, labels, tasks, {}, Mode::eval, rng).gradients;
  const auto analytic_tensors = analytic.tensors();
  ModelParams probe = params;
  auto probe_tensors = probe.tensors();
  auto loss_at = [&]() {
    Rng r(0);
    const auto out = forward(probe, config, batch, Mode::eval, r);
    return compute_loss(out, labels, tasks).total;
  };

  GradientCheck result;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    auto values = probe_tensors[t].values();
    const auto grads = analytic_tensors[t].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_at();
      values[i] = saved - step;
      const double down = loss_at();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = probe_tensors[t].name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                       " numeric " + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline std::vector<TokenizedInput> tiny_batch() {
  return {packed({4}, {5, 6}, 6), packed({7}, {8, 9}, 6), packed({10}, {11}, 6), packed({6}, {4, 5}, 6)};
}

inline std::vector<TaskLabels> tiny_labels() {
  std::vector<TaskLabels> labels(4);
  labels[0] = {"a", true, true, TokenSpan{3, 4}, false};
  labels[1] = {"b", true, false, std::nullopt, false};
  labels[2] = {"c", false, true, TokenSpan{3, 3}, false};
  labels[3] = {"d", false, false, std::nullopt, false};
  return labels;
}

inline const std::vector<std::pair<std::string, TaskSet>>& tasksets() {
  static const std::vector<std::pair<std::string, TaskSet>> sets = {
      {"qp", {true, false, false}},
      {"rp", {false, true, false}},
      {"ae", {false, false, true}},
      {"rp+ae", {false, true, true}},
      {"qp+rp+ae", {true, true, true}},
  };
  return sets;
}

// ---------------------------------------------------------------------------
// Filesystem helpers.

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("qaplaus-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::size_t line_count(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace qtest
