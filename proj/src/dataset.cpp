#include "qaplaus/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "qaplaus/errors.hpp"

namespace qaplaus {

namespace {

using ordered_json = nlohmann::ordered_json;

bool is_blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

[[noreturn]] void invalid(const std::string& id, const std::string& field,
                          const std::string& what) {
  throw ValidationError("example '" + id + "': field '" + field + "' " + what);
}

std::string require_string(const ordered_json& value, const char* field) {
  if (!value.is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
  return value.get<std::string>();
}

bool require_bool(const ordered_json& value, const char* field) {
  if (!value.is_boolean()) throw ValidationError(std::string("field '") + field + "' must be a boolean");
  return value.get<bool>();
}

std::size_t require_offset(const ordered_json& value, const char* field) {
  if (!value.is_number_unsigned())
    throw ValidationError(std::string("field 'answer.") + field + "' must be a non-negative integer");
  return value.get<std::size_t>();
}

double require_number(const ordered_json& value, const char* field) {
  if (!value.is_number()) throw ValidationError(std::string("field 'scores.") + field + "' must be a number");
  return value.get<double>();
}

QAExample example_from_json(const ordered_json& obj) {
  if (!obj.is_object()) throw ValidationError("record is not a JSON object");
  QAExample ex;
  bool has_id = false, has_question = false, has_response = false;
  for (const auto& [key, value] : obj.items()) {
    if (key == "id") {
      ex.id = require_string(value, "id");
      has_id = true;
    } else if (key == "question") {
      ex.question = require_string(value, "question");
      has_question = true;
    } else if (key == "response") {
      ex.response = require_string(value, "response");
      has_response = true;
    } else if (key == "question_plausible") {
      ex.question_plausible = require_bool(value, "question_plausible");
    } else if (key == "response_plausible") {
      ex.response_plausible = require_bool(value, "response_plausible");
    } else if (key == "answer") {
      if (!value.is_object()) throw ValidationError("field 'answer' must be an object");
      AnswerSpan span;
      bool has_start = false, has_end = false;
      for (const auto& [akey, avalue] : value.items()) {
        if (akey == "start") {
          span.start = require_offset(avalue, "start");
          has_start = true;
        } else if (akey == "end") {
          span.end = require_offset(avalue, "end");
          has_end = true;
        } else {
          throw ValidationError("unknown field 'answer." + akey + "'");
        }
      }
      if (!has_start || !has_end) throw ValidationError("field 'answer' needs both start and end");
      ex.answer = span;
    } else if (key == "split") {
      ex.split = parse_split(require_string(value, "split"));
    } else if (key == "scores") {
      if (!value.is_object()) throw ValidationError("field 'scores' must be an object");
      ExampleScores scores;
      bool has_qp = false, has_rp = false;
      for (const auto& [skey, svalue] : value.items()) {
        if (skey == "qp") {
          scores.qp = require_number(svalue, "qp");
          has_qp = true;
        } else if (skey == "rp") {
          scores.rp = require_number(svalue, "rp");
          has_rp = true;
        } else {
          throw ValidationError("unknown field 'scores." + skey + "'");
        }
      }
      if (!has_qp || !has_rp) throw ValidationError("field 'scores' needs both qp and rp");
      ex.scores = scores;
    } else {
      throw ValidationError("unknown field '" + key + "'");
    }
  }
  if (!has_id) throw ValidationError("missing field 'id'");
  if (!has_question) invalid(ex.id, "question", "is missing");
  if (!has_response) invalid(ex.id, "response", "is missing");
  return ex;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ValidationError("field 'split' must be one of train/val/test, got '" + std::string(text) + "'");
}

void validate_example(const QAExample& ex) {
  if (ex.id.empty()) throw ValidationError("field 'id' must be non-empty");
  if (is_blank(ex.question)) invalid(ex.id, "question", "must be non-empty");
  if (is_blank(ex.response)) invalid(ex.id, "response", "must be non-empty");
  if (ex.answer) {
    const auto& span = *ex.answer;
    if (!(span.start < span.end && span.end <= ex.response.size()))
      invalid(ex.id, "answer", "must satisfy 0 <= start < end <= length(response)");
    if (is_blank(std::string_view(ex.response).substr(span.start, span.end - span.start)))
      invalid(ex.id, "answer", "covers only whitespace");
    if (ex.response_plausible != true)
      invalid(ex.id, "answer", "is present but response_plausible is not true");
  }
  if (ex.scores && !(std::isfinite(ex.scores->qp) && std::isfinite(ex.scores->rp)))
    invalid(ex.id, "scores", "must be finite");
}

std::string answer_text(const QAExample& ex) {
  if (!ex.answer) return {};
  return ex.response.substr(ex.answer->start, ex.answer->end - ex.answer->start);
}

std::vector<QAExample> parse_corpus(std::istream& in) {
  std::vector<QAExample> out;
  std::vector<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    try {
      QAExample ex = example_from_json(obj);
      validate_example(ex);
      out.push_back(std::move(ex));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    seen.push_back(out.back().id);
  }
  std::sort(seen.begin(), seen.end());
  if (auto dup = std::adjacent_find(seen.begin(), seen.end()); dup != seen.end())
    throw ValidationError("duplicate example id '" + *dup + "'");
  return out;
}

std::vector<QAExample> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in);
}

std::string to_jsonl(const QAExample& ex) {
  ordered_json obj;
  obj["id"] = ex.id;
  obj["question"] = ex.question;
  obj["response"] = ex.response;
  if (ex.question_plausible) obj["question_plausible"] = *ex.question_plausible;
  if (ex.response_plausible) obj["response_plausible"] = *ex.response_plausible;
  if (ex.answer) {
    ordered_json span;
    span["start"] = ex.answer->start;
    span["end"] = ex.answer->end;
    obj["answer"] = std::move(span);
  }
  if (ex.split) obj["split"] = std::string(to_string(*ex.split));
  if (ex.scores) {
    ordered_json scores;
    scores["qp"] = ex.scores->qp;
    scores["rp"] = ex.scores->rp;
    obj["scores"] = std::move(scores);
  }
  return obj.dump();
}

void write_corpus(std::ostream& out, const std::vector<QAExample>& examples) {
  for (const auto& ex : examples) out << to_jsonl(ex) << '\n';
}

void write_corpus(const std::filesystem::path& path, const std::vector<QAExample>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus '" + path.string() + "'");
  write_corpus(out, examples);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

bool is_where_question(std::string_view question) {
  std::size_t i = 0;
  while (i < question.size() && std::isspace(static_cast<unsigned char>(question[i]))) ++i;
  constexpr std::string_view kWhere = "where";
  if (question.size() - i < kWhere.size()) return false;
  for (std::size_t k = 0; k < kWhere.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(question[i + k])) != kWhere[k]) return false;
  }
  // The next character must end the token ("where's" splits at the quote).
  const std::size_t next = i + kWhere.size();
  return next == question.size() || !std::isalnum(static_cast<unsigned char>(question[next]));
}

WhereFilterResult filter_where_questions(std::vector<QAExample> examples) {
  WhereFilterResult result;
  for (auto& ex : examples) {
    (is_where_question(ex.question) ? result.removed : result.kept).push_back(std::move(ex));
  }
  return result;
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

SpanCapVerdict enforce_label_span_cap(const QAExample& ex, std::size_t cap) {
  if (cap < 1) throw ValidationError("span cap must be >= 1");
  if (!ex.answer) return {};
  const std::size_t words = count_words(answer_text(ex));
  return {words <= cap, words};
}

// ---------------------------------------------------------------------------

SplitSizes split_sizes(std::size_t n, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ValidationError("split fractions must be non-negative and sum to 1");
  if (n < 3) throw ValidationError("need at least 3 examples to populate train/val/test, got " + std::to_string(n));
  // The epsilon absorbs representation error (7200 * 0.1 must give 720).
  auto part = [n](double fraction) -> std::size_t {
    if (fraction <= 0) return 0;
    const auto size = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
    return std::max<std::size_t>(size, 1);
  };
  SplitSizes sizes;
  sizes.val = part(f.val);
  sizes.test = part(f.test);
  if (sizes.val + sizes.test >= n) throw ValidationError("split leaves no training examples");
  sizes.train = n - sizes.val - sizes.test;
  return sizes;
}

CorpusSplits split_corpus(std::vector<QAExample> examples, const SplitFractions& fractions,
                          std::uint64_t seed) {
  const SplitSizes sizes = split_sizes(examples.size(), fractions);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Split> assignment(examples.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    Split s = Split::train;
    if (rank >= sizes.train + sizes.val) s = Split::test;
    else if (rank >= sizes.train) s = Split::val;
    assignment[order[rank]] = s;
  }

  CorpusSplits out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    examples[i].split = assignment[i];
    switch (assignment[i]) {
      case Split::train: out.train.push_back(std::move(examples[i])); break;
      case Split::val: out.val.push_back(std::move(examples[i])); break;
      case Split::test: out.test.push_back(std::move(examples[i])); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ClassProportions ClassProportions::reference_mix() { return {50.6, 22.8, 11.4, 15.3}; }

ClassProportions ClassProportions::normalized() const {
  if (p_yy < 0 || p_yn < 0 || p_ny < 0 || p_nn < 0) throw ValidationError("class proportions must be non-negative");
  const double sum = p_yy + p_yn + p_ny + p_nn;
  if (!(sum > 0)) throw ValidationError("class proportions must not all be zero");
  return {p_yy / sum, p_yn / sum, p_ny / sum, p_nn / sum};
}

ClassCounts synth_class_counts(std::size_t n, const ClassProportions& proportions) {
  const ClassProportions p = proportions.normalized();
  const auto nd = static_cast<double>(n);
  ClassCounts counts;
  counts.yn = static_cast<std::size_t>(std::llround(nd * p.p_yn));
  counts.ny = static_cast<std::size_t>(std::llround(nd * p.p_ny));
  counts.nn = static_cast<std::size_t>(std::llround(nd * p.p_nn));
  const std::size_t minority = counts.yn + counts.ny + counts.nn;
  if (minority > n) throw ValidationError("class proportions overflow the requested size");
  counts.yy = n - minority;
  return counts;
}

ClassCounts count_classes(const std::vector<QAExample>& examples) {
  ClassCounts counts;
  for (const auto& ex : examples) {
    if (!ex.question_plausible || !ex.response_plausible) continue;
    const bool q = *ex.question_plausible, r = *ex.response_plausible;
    if (q && r) ++counts.yy;
    else if (q) ++counts.yn;
    else if (r) ++counts.ny;
    else ++counts.nn;
  }
  return counts;
}

}  // namespace qaplaus
