#include "qaplaus/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "qaplaus/errors.hpp"

namespace qaplaus {

double accuracy(std::span<const ScoredLabel> items, double threshold) {
  if (items.empty()) throw ValidationError("accuracy of an empty list is undefined");
  std::size_t correct = 0;
  for (const auto& item : items) correct += ((item.score >= threshold) == item.label) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

double auroc(std::span<const ScoredLabel> items) {
  std::size_t positives = 0;
  for (const auto& item : items) {
    if (!std::isfinite(item.score)) throw ValidationError("AUROC needs finite scores");
    positives += item.label ? 1 : 0;
  }
  const std::size_t negatives = items.size() - positives;
  if (positives == 0 || negatives == 0) throw ValidationError("AUROC undefined: need both classes");

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });

  // Sum of 1-based ranks of positives, tied groups sharing their mean rank.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && items[order[j + 1]].score == items[order[i]].score) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (items[order[k]].label) positive_rank_sum += mean_rank;
    i = j + 1;
  }
  const auto p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::string normalize_answer(std::string_view text, bool drop_articles) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (c < 0x80 && std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream words(cleaned);
  std::string word, out;
  while (words >> word) {
    if (drop_articles && (word == "a" || word == "an" || word == "the")) continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string word;
  while (in >> word) words.push_back(word);
  return words;
}

}  // namespace

double span_f1(std::string_view predicted, std::string_view gold, bool drop_articles) {
  const auto pred = split_words(normalize_answer(predicted, drop_articles));
  const auto truth = split_words(normalize_answer(gold, drop_articles));
  if (pred.empty() && truth.empty()) return 1.0;
  if (pred.empty() || truth.empty()) return 0.0;
  std::map<std::string, std::size_t> gold_counts;
  for (const auto& w : truth) ++gold_counts[w];
  std::size_t overlap = 0;
  for (const auto& w : pred) {
    auto it = gold_counts.find(w);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(truth.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view predicted, std::string_view gold, bool drop_articles) {
  return normalize_answer(predicted, drop_articles) == normalize_answer(gold, drop_articles);
}

double corpus_f1(std::span<const std::pair<std::string, std::string>> pairs, bool drop_articles) {
  if (pairs.empty()) throw ValidationError("corpus F1 of an empty list is undefined");
  double sum = 0.0;
  for (const auto& [pred, gold] : pairs) sum += span_f1(pred, gold, drop_articles);
  return sum / static_cast<double>(pairs.size());
}

}  // namespace qaplaus
