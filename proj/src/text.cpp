#include "tta/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace tta {
namespace {

const std::vector<std::string> kSpecialTokens = {"[PAD]", "[BOS]", "[EOS]", "[MASK]", "[UNK]"};

std::string_view trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: keep it as its own token
}

}  // namespace

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::word ? "word" : "char";
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "word") return TokenizerMode::word;
  if (name == "char") return TokenizerMode::character;
  throw ContractError("unknown tokenizer mode '" + std::string(name) + "'");
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view t = trim(line);
    if (!t.empty()) lines.emplace_back(t);
  }
  return lines;
}

std::vector<std::string> tokenize(std::string_view text, TokenizerMode mode) {
  std::vector<std::string> out;
  text = trim(text);
  if (mode == TokenizerMode::word) {
    std::string current;
    for (char ch : text) {
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  } else {
    for (std::size_t i = 0; i < text.size();) {
      const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.emplace_back(text.substr(i, len));
      i += len;
    }
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens, TokenizerMode mode)
    : tokens_(std::move(tokens)), mode_(mode) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw FormatError("vocab: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::build(std::span<const std::string> lines, TokenizerMode mode, int max_size) {
  if (lines.empty()) throw ContractError("build_vocab: empty corpus");
  if (max_size < kNumSpecialTokens) {
    throw ContractError("build_vocab: max_size must leave room for the special tokens");
  }
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line, mode)) ++counts[tok];
  }
  for (const auto& s : kSpecialTokens) counts.erase(s);
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  // counts is ordered by token, so a stable sort on frequency keeps ties
  // lexicographic.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = kSpecialTokens;
  const std::size_t room = static_cast<std::size_t>(max_size - kNumSpecialTokens);
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) tokens.push_back(ranked[i].first);
  return Vocab(std::move(tokens), mode);
}

Vocab Vocab::load(const std::filesystem::path& path, TokenizerMode mode) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocab " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (i >= tokens.size() || tokens[i] != kSpecialTokens[i]) {
      throw FormatError("vocab " + path.string() + ": line " + std::to_string(i + 1) +
                        " must be " + kSpecialTokens[i]);
    }
  }
  return Vocab(std::move(tokens), mode);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocab " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw DimensionError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

EncodedSentence encode(std::string_view text, const Vocab& vocab, int max_len) {
  std::vector<std::string> toks = tokenize(text, vocab.mode());
  if (toks.empty()) throw ContractError("encode: empty text");
  EncodedSentence s;
  s.text = std::string(trim(text));
  s.ids.reserve(toks.size() + 2);
  s.ids.push_back(kBosId);
  for (const auto& t : toks) s.ids.push_back(vocab.id(t));
  s.ids.push_back(kEosId);
  if (s.size() > max_len) {
    throw LengthError("encode: " + std::to_string(s.size()) + " tokens exceed max_len " +
                      std::to_string(max_len));
  }
  return s;
}

std::string decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id < kNumSpecialTokens && id != kUnkId) continue;
    if (vocab.mode() == TokenizerMode::word && !out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

Matrix<double> PaddedBatch::attention_mask(std::size_t row) const {
  const Eigen::Index n = key_mask.cols();
  Matrix<double> mask(n, n);
  mask.rowwise() = key_mask.row(static_cast<Eigen::Index>(row));
  return mask;
}

PaddedBatch batch(std::span<const std::vector<TokenId>> sentences, int pad_to) {
  PaddedBatch b;
  b.key_mask = Matrix<double>::Zero(static_cast<Eigen::Index>(sentences.size()), pad_to);
  for (std::size_t r = 0; r < sentences.size(); ++r) {
    const auto n = static_cast<int>(sentences[r].size());
    if (n > pad_to) {
      throw LengthError("batch: sentence of " + std::to_string(n) + " tokens exceeds pad_to " +
                        std::to_string(pad_to));
    }
    std::vector<TokenId> row = sentences[r];
    row.resize(static_cast<std::size_t>(pad_to), kPadId);
    b.ids.push_back(std::move(row));
    b.lengths.push_back(n);
    b.key_mask.row(static_cast<Eigen::Index>(r)).tail(pad_to - n).setConstant(kMaskNeg<double>);
  }
  return b;
}

PaddedBatch batch(std::span<const EncodedSentence> sentences, int pad_to) {
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(sentences.size());
  for (const auto& s : sentences) ids.push_back(s.ids);
  return batch(std::span<const std::vector<TokenId>>(ids), pad_to);
}

}  // namespace tta
