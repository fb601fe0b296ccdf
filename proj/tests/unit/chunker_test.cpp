#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fetilda/chunker.hpp"
#include "fetilda/rng.hpp"

using namespace fetilda;

namespace {

Vocabulary tiny_vocab() { return Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "the", "bank", "##s"}); }

TokenSequence random_sequence(Rng& rng, std::size_t n, int vocab_size) {
  TokenSequence s;
  s.doc_id = "doc";
  s.ids.resize(n);
  // ids 4.. are ordinary tokens in every vocabulary used here
  for (auto& id : s.ids) id = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab_size - 4)));
  return s;
}

}  // namespace

TEST(Vocabulary, LoadsShippedFiles) {
  const auto small = Vocabulary::load(std::string(FETILDA_DATA_DIR) + "/vocab/test_100.txt");
  EXPECT_EQ(small.size(), 100u);
  const auto general = Vocabulary::load(std::string(FETILDA_DATA_DIR) + "/vocab/general_30k.txt");
  EXPECT_EQ(general.size(), 30000u);
  for (const auto* v : {&small, &general}) {
    const std::vector<int> sp{v->cls(), v->sep(), v->pad(), v->unk()};
    EXPECT_EQ(std::set<int>(sp.begin(), sp.end()).size(), 4u);
  }
}

TEST(Vocabulary, RejectsMissingSpecialsAndDuplicates) {
  EXPECT_THROW(Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "the"}), std::invalid_argument);
  EXPECT_THROW(Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"}), std::invalid_argument);
  const auto angle = Vocabulary::from_tokens({"<PAD>", "<UNK>", "<CLS>", "<SEP>", "a"});
  EXPECT_EQ(angle.cls(), 2);
}

TEST(Tokenize, InVocabularyWords) {
  const auto v = tiny_vocab();
  const auto seq = tokenize("The bank", v);
  EXPECT_EQ(seq.ids, (std::vector<int>{4, 5}));
  ASSERT_EQ(seq.offsets.size(), 2u);
  EXPECT_EQ(seq.offsets[1], (std::pair<std::size_t, std::size_t>{4, 8}));
}

TEST(Tokenize, SubwordsAndUnknownSpans) {
  const auto v = tiny_vocab();
  // "banks" splits into bank + ##s; "zzz" and "zq" are one UNK each;
  // "thezz" keeps "the" and one UNK for the unmatched tail.
  EXPECT_EQ(tokenize("zzz BANKS zq thezz", v).ids, (std::vector<int>{1, 5, 6, 1, 4, 1}));
  EXPECT_EQ(tokenize("zzthe", v).ids, (std::vector<int>{1}));
  EXPECT_TRUE(tokenize("", v).ids.empty());
  EXPECT_TRUE(tokenize("  \n\t ", v).ids.empty());
}

TEST(Tokenize, PunctuationSplitsWordsAndSpecialsNeverAppear) {
  const auto v = Vocabulary::load(std::string(FETILDA_DATA_DIR) + "/vocab/test_100.txt");
  const auto seq = tokenize("[CLS] net income, [SEP] <PAD>", v);
  for (int id : seq.ids) {
    EXPECT_NE(id, v.cls());
    EXPECT_NE(id, v.sep());
    EXPECT_NE(id, v.pad());
  }
  EXPECT_EQ(detokenize(tokenize("net income, assets.", v).ids, v), "net income , assets .");
}

// tokenize(detokenize(tokenize(x))) == tokenize(x) for in-vocabulary text.
TEST(Tokenize, IdempotentOnDetokenizedOutput) {
  const auto v = Vocabulary::load(std::string(FETILDA_DATA_DIR) + "/vocab/general_30k.txt");
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const auto words = 1 + rng.below(40);
    for (std::uint64_t w = 0; w < words; ++w) {
      std::string tok;
      do {
        tok = v.token(static_cast<int>(4 + rng.below(v.size() - 4)));
      } while (tok.rfind("##", 0) == 0);
      text += tok;
      // occasionally glue a continuation piece to the word
      if (rng.bernoulli(0.2)) text += "ing";
      text += rng.bernoulli(0.1) ? "\n" : " ";
    }
    const auto first = tokenize(text, v);
    const auto again = tokenize(detokenize(first.ids, v), v);
    EXPECT_EQ(first.ids, again.ids) << text;
  }
}

TEST(MakeChunks, ExactMultipleHasNoPadding) {
  const auto v = tiny_vocab();
  Rng rng(1);
  const auto chunks = make_chunks(random_sequence(rng, 1020, 7), 510, 20480, v);
  ASSERT_EQ(chunks.size(), 2u);
  for (const auto& c : chunks) {
    EXPECT_EQ(c.ids.size(), 512u);
    EXPECT_EQ(c.valid_length(), 512u);
    EXPECT_EQ(c.ids.front(), v.cls());
    EXPECT_EQ(c.ids.back(), v.sep());
  }
}

TEST(MakeChunks, ShortDocumentPaddedAfterSep) {
  const auto v = tiny_vocab();
  Rng rng(2);
  const auto chunks = make_chunks(random_sequence(rng, 5, 7), 510, 20480, v);
  ASSERT_EQ(chunks.size(), 1u);
  const auto& c = chunks[0];
  EXPECT_EQ(c.ids.size(), 512u);
  EXPECT_EQ(c.valid_length(), 7u);
  EXPECT_EQ(c.ids[0], v.cls());
  EXPECT_EQ(c.ids[6], v.sep());
  EXPECT_EQ(std::count(c.ids.begin(), c.ids.end(), v.pad()), 505);
  for (std::size_t j = 0; j < c.ids.size(); ++j) EXPECT_EQ(c.mask[j] == 0, c.ids[j] == v.pad());
}

TEST(MakeChunks, TruncatesLongDocuments) {
  const auto v = tiny_vocab();
  Rng rng(3);
  const auto seq = random_sequence(rng, 25000, 7);
  const auto chunks = make_chunks(seq, 510, 20480, v);
  EXPECT_EQ(chunks.size(), 41u);
  EXPECT_EQ(chunks.back().valid_length(), 20480u - 40u * 510u + 2u);
  const auto back = reassemble(chunks, v);
  EXPECT_TRUE(std::equal(back.ids.begin(), back.ids.end(), seq.ids.begin()));
  EXPECT_EQ(back.ids.size(), 20480u);
}

TEST(MakeChunks, EmptyDocumentIsOneDegenerateChunk) {
  const auto v = tiny_vocab();
  TokenSequence empty;
  empty.doc_id = "e";
  const auto chunks = make_chunks(empty, 8, 100, v);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_TRUE(chunks[0].degenerate);
  EXPECT_EQ(chunks[0].ids, (std::vector<int>{2, 3, 0, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_TRUE(reassemble(chunks, v).ids.empty());
}

TEST(MakeChunks, RejectsBadSizes) {
  const auto v = tiny_vocab();
  TokenSequence s;
  EXPECT_THROW(make_chunks(s, 0, 10, v), std::invalid_argument);
  EXPECT_THROW(make_chunks(s, 16, 10, v), std::invalid_argument);
}

TEST(Reassemble, RejectsGapsAndShuffles) {
  const auto v = tiny_vocab();
  Rng rng(4);
  auto chunks = make_chunks(random_sequence(rng, 50, 7), 8, 1000, v);
  auto gap = chunks;
  gap.erase(gap.begin() + 2);
  EXPECT_THROW(reassemble(gap, v), std::invalid_argument);
  std::swap(chunks[0], chunks[3]);
  EXPECT_THROW(reassemble(chunks, v), std::invalid_argument);
}

// Round trip, chunk count, length and mask census for random sequences.
TEST(MakeChunks, PropertiesOverRandomSequences) {
  const auto v = Vocabulary::load(std::string(FETILDA_DATA_DIR) + "/vocab/test_100.txt");
  Rng rng(5);
  const std::size_t max_tokens = 20480;
  for (std::size_t b : {8u, 510u, 4094u, 8190u}) {
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = rng.below(30000);
      const auto seq = random_sequence(rng, n, 100);
      const auto chunks = make_chunks(seq, b, max_tokens, v);
      const std::size_t kept = std::min(n, max_tokens);
      const std::size_t m = std::max<std::size_t>(1, (kept + b - 1) / b);
      ASSERT_EQ(chunks.size(), m);
      std::size_t ones = 0;
      for (const auto& c : chunks) {
        ASSERT_EQ(c.ids.size(), b + 2);
        ASSERT_EQ(c.ids.front(), v.cls());
        ones += c.valid_length();
        ASSERT_EQ(c.ids[c.valid_length() - 1], v.sep());
      }
      EXPECT_EQ(ones, kept + 2 * m);
      const auto back = reassemble(chunks, v);
      ASSERT_EQ(back.ids.size(), kept);
      EXPECT_TRUE(std::equal(back.ids.begin(), back.ids.end(), seq.ids.begin()));
    }
  }
}
