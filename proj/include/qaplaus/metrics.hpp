#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qaplaus {

struct ScoredLabel {
  double score = 0.0;
  bool label = false;
};

/// Fraction of items with (score >= threshold) == label.
double accuracy(std::span<const ScoredLabel> items, double threshold = 0.5);

/// Mann-Whitney AUROC from average ranks: P(score_pos > score_neg) plus half
/// the tie probability. Needs at least one item of each class.
double auroc(std::span<const ScoredLabel> items);

/// Lowercase, ASCII punctuation removed, whitespace collapsed. Articles are
/// kept unless `drop_articles` is set.
std::string normalize_answer(std::string_view text, bool drop_articles = false);

/// Bag-of-tokens overlap F1 between normalized strings. Both empty scores
/// 1, exactly one empty scores 0.
double span_f1(std::string_view predicted, std::string_view gold, bool drop_articles = false);

bool exact_match(std::string_view predicted, std::string_view gold, bool drop_articles = false);

/// Mean span_f1 over the pairs.
double corpus_f1(std::span<const std::pair<std::string, std::string>> pairs, bool drop_articles = false);

}  // namespace qaplaus
