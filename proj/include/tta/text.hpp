#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tta/special_tokens.hpp"
#include "tta/tensor.hpp"

namespace tta {

enum class TokenizerMode { word, character };

std::string_view to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view name);

/// Whitespace-trimmed, non-blank lines of a UTF-8 file.
std::vector<std::string> read_corpus(const std::filesystem::path& path);

/// Splits text into tokens: lowercased whitespace words, or UTF-8 code points.
std::vector<std::string> tokenize(std::string_view text, TokenizerMode mode);

/// Token table with the five specials at ids 0..4 ([PAD] [BOS] [EOS] [MASK]
/// [UNK]) followed by corpus tokens in descending frequency, ties broken
/// lexicographically.
class Vocab {
 public:
  static Vocab build(std::span<const std::string> lines, TokenizerMode mode, int max_size);
  /// One token per line, line number = id.
  static Vocab load(const std::filesystem::path& path, TokenizerMode mode);
  void save(const std::filesystem::path& path) const;

  /// Id of a token, or kUnkId.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  TokenizerMode mode() const { return mode_; }

 private:
  Vocab(std::vector<std::string> tokens, TokenizerMode mode);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenizerMode mode_;
};

struct EncodedSentence {
  std::vector<TokenId> ids;  // [BOS] ... [EOS]
  std::string text;
  int size() const { return static_cast<int>(ids.size()); }
};

/// Throws ContractError for text with no tokens and LengthError when the
/// encoding exceeds max_len.
EncodedSentence encode(std::string_view text, const Vocab& vocab, int max_len);

/// Inverse of encode for in-vocabulary text; specials other than [UNK] are
/// dropped.
std::string decode(std::span<const TokenId> ids, const Vocab& vocab);

struct PaddedBatch {
  std::vector<std::vector<TokenId>> ids;  // each row has pad_to entries
  Matrix<double> key_mask;                // rows x pad_to; kMaskNeg at [PAD] columns
  std::vector<int> lengths;

  /// The pad_to x pad_to additive mask of one row (every query sees the
  /// same key mask).
  Matrix<double> attention_mask(std::size_t row) const;
};

/// Pads sentences with [PAD] to pad_to. Throws LengthError if any is longer.
PaddedBatch batch(std::span<const EncodedSentence> sentences, int pad_to);
PaddedBatch batch(std::span<const std::vector<TokenId>> sentences, int pad_to);

}  // namespace tta
