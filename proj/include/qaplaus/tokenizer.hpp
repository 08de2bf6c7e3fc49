#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qaplaus/dataset.hpp"

namespace qaplaus {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr std::size_t kReservedTokens = 4;

// WordPiece vocabulary size of the full-scale pretrained encoder. Reference
// only; desk-scale vocabularies are built from the corpus.
inline constexpr std::size_t kReferenceVocabSize = 30522;

// Half-open byte range into the raw text a token came from.
struct CharRange {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const CharRange&) const = default;
};

struct Token {
  std::string text;  // lowercased surface form
  CharRange range;   // offsets into the original text
};

/// Whitespace split with ASCII punctuation detached into single-character
/// tokens. Bytes >= 0x80 are treated as word characters.
std::vector<Token> tokenize(std::string_view text);

class Vocab {
 public:
  /// `tokens[i]` is the token with id i; the first four must be the reserved
  /// tokens in id order.
  explicit Vocab(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the vocabulary file contents; checkpoints record it.
  std::uint64_t fingerprint() const;

  /// One token per line, line number = id.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int, Hash, std::equal_to<>> ids_;
};

/// Keeps the `max_size - 4` most frequent question/response tokens, ties
/// broken lexicographically.
Vocab build_vocab(const std::vector<QAExample>& corpus, std::size_t max_size);

struct TokenizedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<bool> pad_mask;  // true at padding positions
  std::vector<std::optional<CharRange>> response_char_spans;

  std::size_t length() const { return token_ids.size(); }
  /// Number of leading non-pad positions.
  std::size_t valid_length() const;
  /// Index of the first response token.
  std::size_t response_begin() const;
  /// One past the last response token (the position of the final [SEP]).
  std::size_t response_end() const;
};

inline constexpr std::size_t kMinEncodeLength = 8;

/// [CLS] question [SEP] response [SEP] [PAD]... padded to `max_len`. When
/// too long, response tokens are dropped from the tail first (keeping at
/// least one), then question tokens.
TokenizedInput encode_pair(std::string_view question, std::string_view response,
                           const Vocab& vocab, std::size_t max_len);

// Inclusive token indices.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const TokenSpan&) const = default;
};

/// First and last response tokens whose character range intersects `span`.
/// nullopt means the span was lost to truncation.
std::optional<TokenSpan> char_span_to_token_span(const TokenizedInput& input,
                                                 const AnswerSpan& span);

/// Byte range of the response covered by an inclusive token span.
CharRange token_span_to_char_range(const TokenizedInput& input, TokenSpan span);

std::string token_span_to_substring(const TokenizedInput& input, std::string_view response,
                                    TokenSpan span);

}  // namespace qaplaus
