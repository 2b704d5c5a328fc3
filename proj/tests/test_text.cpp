#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tta/text.hpp"

namespace tta {
namespace {

Vocab vocab_of(std::vector<std::string> lines, TokenizerMode mode = TokenizerMode::word, int max_size = 100) {
  return Vocab::build(lines, mode, max_size);
}

TEST(Vocab, SpecialsOccupyTheFirstIds) {
  const Vocab v = vocab_of({"x y"});
  EXPECT_EQ(v.token(kPadId), "[PAD]");
  EXPECT_EQ(v.token(kBosId), "[BOS]");
  EXPECT_EQ(v.token(kEosId), "[EOS]");
  EXPECT_EQ(v.token(kMaskId), "[MASK]");
  EXPECT_EQ(v.token(kUnkId), "[UNK]");
  EXPECT_EQ(v.size(), 7);
}

TEST(Vocab, FrequencyOrderThenLexicographic) {
  const Vocab v = vocab_of({"a b a"});
  EXPECT_LT(v.id("a"), v.id("b"));
  const Vocab ties = vocab_of({"zeta alpha mid", "mid"});
  EXPECT_EQ(ties.id("mid"), kNumSpecialTokens);
  EXPECT_EQ(ties.id("alpha"), kNumSpecialTokens + 1);
  EXPECT_EQ(ties.id("zeta"), kNumSpecialTokens + 2);
}

TEST(Vocab, TruncatesToMaxSize) {
  const Vocab v = vocab_of({"a a a b b c"}, TokenizerMode::word, 6);
  EXPECT_EQ(v.size(), 6);
  EXPECT_EQ(v.id("a"), kNumSpecialTokens);
  EXPECT_EQ(v.id("b"), kUnkId);
  EXPECT_EQ(v.id("c"), kUnkId);
}

TEST(Vocab, DeterministicAndErrors) {
  const std::vector<std::string> corpus{"the cat sat", "on the mat", "the end"};
  const Vocab a = Vocab::build(corpus, TokenizerMode::word, 50);
  const Vocab b = Vocab::build(corpus, TokenizerMode::word, 50);
  ASSERT_EQ(a.size(), b.size());
  for (TokenId i = 0; i < a.size(); ++i) EXPECT_EQ(a.token(i), b.token(i));
  EXPECT_THROW(Vocab::build({}, TokenizerMode::word, 50), ContractError);
  EXPECT_EQ(Vocab::build(corpus, TokenizerMode::word, 5).size(), 5);
  EXPECT_THROW(Vocab::build(corpus, TokenizerMode::word, 4), ContractError);
}

TEST(Vocab, LowercasesWordsButNotCharacters) {
  const Vocab w = vocab_of({"The THE the"});
  EXPECT_EQ(w.size(), 6);
  EXPECT_EQ(w.id("the"), kNumSpecialTokens);
  const Vocab c = vocab_of({"aA"}, TokenizerMode::character);
  EXPECT_EQ(c.size(), 7);
}

TEST(Vocab, SaveLoadRoundTrip) {
  test::TempDir dir("vocab");
  const Vocab v = vocab_of({"b a c a", "é ü"});
  v.save(dir / "v.txt");
  const std::string text = test::read_file(dir / "v.txt");
  EXPECT_EQ(text.rfind("[PAD]\n[BOS]\n[EOS]\n[MASK]\n[UNK]\na\n", 0), 0u);
  const Vocab back = Vocab::load(dir / "v.txt", TokenizerMode::word);
  ASSERT_EQ(back.size(), v.size());
  for (TokenId i = 0; i < v.size(); ++i) EXPECT_EQ(back.token(i), v.token(i));
  EXPECT_EQ(back.id("é"), v.id("é"));
}

TEST(Vocab, LoadRejectsBadFiles) {
  test::TempDir dir("vocab");
  test::write_file(dir / "nospecial.txt", "a\nb\n");
  EXPECT_THROW(Vocab::load(dir / "nospecial.txt", TokenizerMode::word), FormatError);
  test::write_file(dir / "dup.txt", "[PAD]\n[BOS]\n[EOS]\n[MASK]\n[UNK]\na\na\n");
  EXPECT_THROW(Vocab::load(dir / "dup.txt", TokenizerMode::word), FormatError);
  EXPECT_THROW(Vocab::load(dir / "missing.txt", TokenizerMode::word), Error);
}

TEST(Tokenize, Modes) {
  EXPECT_EQ(tokenize("  Hello   World ", TokenizerMode::word), (std::vector<std::string>{"hello", "world"}));
  EXPECT_EQ(tokenize("añb", TokenizerMode::character), (std::vector<std::string>{"a", "ñ", "b"}));
  EXPECT_EQ(tokenize("a b", TokenizerMode::character), (std::vector<std::string>{"a", " ", "b"}));
}

TEST(Encode, WrapsInBosEos) {
  const Vocab v = vocab_of({"a b a"});
  const auto e = encode("a b", v, 10);
  EXPECT_EQ(e.ids, (std::vector<TokenId>{kBosId, v.id("a"), v.id("b"), kEosId}));
  EXPECT_EQ(e.size(), 4);
  EXPECT_EQ(e.text, "a b");
}

TEST(Encode, UnknownWordIsUnk) {
  const Vocab v = vocab_of({"a b"});
  EXPECT_EQ(encode("a zebra", v, 10).ids[2], kUnkId);
}

TEST(Encode, Errors) {
  const Vocab v = vocab_of({"a b"});
  EXPECT_THROW(encode("   ", v, 10), ContractError);
  EXPECT_THROW(encode("a b a b", v, 5), LengthError);
  EXPECT_NO_THROW(encode("a b a", v, 5));
}

TEST(Encode, DecodeRoundTrip) {
  const Vocab w = vocab_of({"the quick brown fox", "jumps over the lazy dog"});
  for (const std::string s : {"the lazy fox", "dog jumps over the quick brown fox"}) {
    EXPECT_EQ(decode(encode(s, w, 64).ids, w), s);
  }
  const Vocab c = vocab_of({"hello world"}, TokenizerMode::character);
  EXPECT_EQ(decode(encode("hello world", c, 64).ids, c), "hello world");
}

TEST(Corpus, SkipsBlankLinesAndTrims) {
  test::TempDir dir("corpus");
  test::write_file(dir / "c.txt", "  one two \n\n   \nthree\r\n");
  EXPECT_EQ(read_corpus(dir / "c.txt"), (std::vector<std::string>{"one two", "three"}));
  EXPECT_THROW(read_corpus(dir / "missing.txt"), Error);
}

TEST(Batch, PadsAndMasksKeys) {
  const std::vector<std::vector<TokenId>> s{{1, 5, 2}, {1, 5, 6, 7, 2}};
  const PaddedBatch b = batch(std::span<const std::vector<TokenId>>(s), 5);
  EXPECT_EQ(b.ids[0], (std::vector<TokenId>{1, 5, 2, kPadId, kPadId}));
  EXPECT_EQ(b.ids[1], s[1]);
  EXPECT_EQ(b.lengths, (std::vector<int>{3, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    int masked = 0;
    for (int j = 0; j < 5; ++j) masked += b.key_mask(static_cast<Eigen::Index>(r), j) == kMaskNeg<double>;
    EXPECT_EQ(masked, 5 - b.lengths[r]);
    const auto m = b.attention_mask(r);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(Matrix<double>(m.row(i)), Matrix<double>(b.key_mask.row(static_cast<Eigen::Index>(r))));
  }
}

TEST(Batch, SingleExactLengthHasNoPadding) {
  const std::vector<std::vector<TokenId>> s{{1, 5, 6, 2}};
  const PaddedBatch b = batch(std::span<const std::vector<TokenId>>(s), 4);
  EXPECT_EQ(b.ids[0], s[0]);
  EXPECT_EQ(b.key_mask, Matrix<double>::Zero(1, 4));
}

TEST(Batch, OverflowIsLengthError) {
  const std::vector<std::vector<TokenId>> s{{1, 5, 6, 2}};
  EXPECT_THROW(batch(std::span<const std::vector<TokenId>>(s), 3), LengthError);
}

}  // namespace
}  // namespace tta
