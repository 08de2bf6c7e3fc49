#include "qaplaus/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "qaplaus/errors.hpp"

namespace qaplaus {

namespace {

constexpr std::string_view kReserved[kReservedTokens] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (!is_punct(c)) {
      while (j < text.size()) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (is_space(d) || is_punct(d)) break;
        ++j;
      }
    }
    Token tok;
    tok.range = {i, j};
    tok.text.reserve(j - i);
    for (std::size_t k = i; k < j; ++k)
      tok.text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[k]))));
    tokens.push_back(std::move(tok));
    i = j;
  }
  return tokens;
}

// ---------------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReservedTokens) throw ValidationError("vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    if (tokens_[i] != kReserved[i])
      throw ValidationError("vocabulary line " + std::to_string(i + 1) + " must be " + std::string(kReserved[i]));
  }
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ValidationError("vocabulary contains an empty token at id " + std::to_string(i));
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw ValidationError("vocabulary contains duplicate token '" + tokens_[i] + "'");
  }
}

int Vocab::id(std::string_view token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) out.append(t).push_back('\n');
  return out;
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary '" + path.string() + "'");
  out << serialize();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

Vocab build_vocab(const std::vector<QAExample>& corpus, std::size_t max_size) {
  if (max_size < kReservedTokens + 1) throw ValidationError("vocabulary max_size must be >= 5");
  if (corpus.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, std::size_t> freq;
  for (const auto& ex : corpus) {
    for (const auto* text : {&ex.question, &ex.response})
      for (auto& tok : tokenize(*text)) ++freq[std::move(tok.text)];
  }
  for (const auto reserved : kReserved) freq.erase(std::string(reserved));

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map iteration is lexicographic, so a stable sort keeps that tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens(std::begin(kReserved), std::end(kReserved));
  const std::size_t keep = std::min(ranked.size(), max_size - kReservedTokens);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------

std::size_t TokenizedInput::valid_length() const {
  const auto it = std::find(pad_mask.begin(), pad_mask.end(), true);
  return static_cast<std::size_t>(it - pad_mask.begin());
}

std::size_t TokenizedInput::response_begin() const {
  const auto it = std::find(segment_ids.begin(), segment_ids.end(), 1);
  return static_cast<std::size_t>(it - segment_ids.begin());
}

std::size_t TokenizedInput::response_end() const { return valid_length() - 1; }

TokenizedInput encode_pair(std::string_view question, std::string_view response,
                           const Vocab& vocab, std::size_t max_len) {
  if (max_len < kMinEncodeLength) throw ValidationError("max_len must be >= 8");
  auto q_tokens = tokenize(question);
  auto r_tokens = tokenize(response);
  if (q_tokens.empty()) throw ValidationError("question is empty after tokenization");
  if (r_tokens.empty()) throw ValidationError("response is empty after tokenization");

  const std::size_t budget = max_len - 3;
  if (q_tokens.size() + r_tokens.size() > budget) {
    const std::size_t r_keep = std::max<std::size_t>(1, budget > q_tokens.size() ? budget - q_tokens.size() : 1);
    r_tokens.resize(std::min(r_tokens.size(), r_keep));
    if (q_tokens.size() + r_tokens.size() > budget) q_tokens.resize(budget - r_tokens.size());
  }

  TokenizedInput out;
  out.token_ids.reserve(max_len);
  auto push = [&out](int id, int segment, std::optional<CharRange> range) {
    out.token_ids.push_back(id);
    out.segment_ids.push_back(segment);
    out.pad_mask.push_back(false);
    out.response_char_spans.push_back(range);
  };
  push(kClsId, 0, std::nullopt);
  for (const auto& t : q_tokens) push(vocab.id(t.text), 0, std::nullopt);
  push(kSepId, 0, std::nullopt);
  for (const auto& t : r_tokens) push(vocab.id(t.text), 1, t.range);
  push(kSepId, 1, std::nullopt);
  while (out.token_ids.size() < max_len) {
    out.token_ids.push_back(kPadId);
    out.segment_ids.push_back(0);
    out.pad_mask.push_back(true);
    out.response_char_spans.push_back(std::nullopt);
  }
  return out;
}

std::optional<TokenSpan> char_span_to_token_span(const TokenizedInput& input, const AnswerSpan& span) {
  std::optional<TokenSpan> out;
  for (std::size_t i = 0; i < input.length(); ++i) {
    const auto& range = input.response_char_spans[i];
    if (!range || range->end <= span.start || range->start >= span.end) continue;
    if (!out) out = TokenSpan{i, i};
    out->end = i;
  }
  return out;
}

CharRange token_span_to_char_range(const TokenizedInput& input, TokenSpan span) {
  if (span.start > span.end || span.end >= input.length())
    throw std::out_of_range("token span outside the input");
  const auto& first = input.response_char_spans[span.start];
  const auto& last = input.response_char_spans[span.end];
  if (!first || !last) throw std::invalid_argument("token span does not lie on response tokens");
  return {first->start, last->end};
}

std::string token_span_to_substring(const TokenizedInput& input, std::string_view response,
                                    TokenSpan span) {
  const CharRange range = token_span_to_char_range(input, span);
  return std::string(response.substr(range.start, range.end - range.start));
}

}  // namespace qaplaus
