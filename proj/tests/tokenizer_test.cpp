#include <gtest/gtest.h>

#include <sstream>

#include "maskmatch/numerics/rng.hpp"
#include "maskmatch/tokenizer.hpp"

using namespace maskmatch;

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
    auto toks = tokenize("Currently Ritek, the producer. It is [MASK].");
    std::vector<std::string> want = {"currently", "ritek", ",", "the", "producer", ".", "it", "is", "[MASK]", "."};
    EXPECT_EQ(toks, want);
}

TEST(Tokenize, OptionsAreConfigurable) {
    TokenizerOptions raw{false, false};
    std::vector<std::string> want = {"Hello,", "World", "[MASK]", "."};
    EXPECT_EQ(tokenize("Hello, World [MASK].", raw), want);
}

TEST(BuildVocab, MinCountFilters) {
    std::vector<std::string> corpus = {"a b", "a c"};
    auto v = Vocab::build(corpus, 2);
    EXPECT_TRUE(v.contains("a"));
    EXPECT_FALSE(v.contains("b"));
    EXPECT_FALSE(v.contains("c"));
    EXPECT_EQ(v.id("b"), kUnk);
    EXPECT_EQ(v.size(), kReservedTokens.size() + 1);
}

TEST(BuildVocab, ReservedTokensAtFixedIds) {
    std::vector<std::string> corpus = {"it is [MASK] [MASK] [E1] x [/E1]"};
    auto v = Vocab::build(corpus, 1);
    for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
        EXPECT_EQ(v.id(kReservedTokens[i]), static_cast<int>(i));
        EXPECT_EQ(v.token(static_cast<int>(i)), kReservedTokens[i]);
    }
    int masks = 0;
    for (std::size_t i = 0; i < v.size(); ++i) masks += v.token(static_cast<int>(i)) == "[MASK]";
    EXPECT_EQ(masks, 1);
}

TEST(BuildVocab, Lowercases) {
    std::vector<std::string> corpus = {"Ritek"};
    auto v = Vocab::build(corpus, 1);
    EXPECT_TRUE(v.contains("ritek"));
    EXPECT_FALSE(v.contains("Ritek"));
}

TEST(BuildVocab, EmptyCorpusIsIngestionError) {
    std::vector<std::string> corpus;
    try {
        Vocab::build(corpus, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kData);
    }
}

TEST(VocabFile, ExactLineFormatAndRoundTrip) {
    std::vector<std::string> corpus = {"b a a"};
    auto v = Vocab::build(corpus, 1);
    std::ostringstream os;
    v.save(os);
    EXPECT_EQ(os.str(),
              "[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\n[MASK]\t4\n[E1]\t5\n[/E1]\t6\n[E2]\t7\n[/E2]\t8\n"
              "a\t9\nb\t10\n");
    std::istringstream is(os.str());
    EXPECT_EQ(Vocab::load(is), v);
}

TEST(VocabFile, RejectsMovedReservedToken) {
    std::istringstream is("[UNK]\t0\n[PAD]\t1\n");
    EXPECT_THROW(Vocab::load(is), Error);
}

TEST(Encode, MaskAtEnd) {
    std::vector<std::string> corpus = {"it is"};
    auto v = Vocab::build(corpus, 1);
    auto seq = encode("it is [MASK]", v, 32);
    EXPECT_EQ(seq.ids.front(), kCls);
    EXPECT_EQ(seq.ids.back(), kMask);
    ASSERT_EQ(seq.mask_positions.size(), 1u);
    EXPECT_EQ(seq.mask_positions[0], seq.size() - 1);
}

TEST(Encode, TruncationKeepsPromptSuffix) {
    std::string body;
    for (int i = 0; i < 600; ++i) body += "w" + std::to_string(i % 50) + " ";
    const std::string suffix = ". It is [MASK].";
    std::vector<std::string> corpus = {body, suffix};
    auto v = Vocab::build(corpus, 1);
    auto seq = encode(body, suffix, v, 500);
    EXPECT_EQ(seq.size(), 500u);
    auto suffix_ids = encode(suffix, v, 500).ids;
    ASSERT_EQ(seq.mask_positions.size(), 1u);
    for (std::size_t i = 1; i < suffix_ids.size(); ++i) {
        EXPECT_EQ(seq.ids[seq.size() - suffix_ids.size() + i], suffix_ids[i]);
    }
    // body is cut from its right end: the first body tokens survive
    EXPECT_EQ(v.token(seq.ids[1]), "w0");
}

TEST(Encode, EmptyInputIsExactlyThePrompt) {
    std::vector<std::string> corpus = {"it is"};
    auto v = Vocab::build(corpus, 1);
    auto seq = encode("", "It is [MASK].", v, 500);
    auto direct = tokenize("It is [MASK].");
    ASSERT_EQ(seq.size(), 1 + direct.size());
    EXPECT_EQ(seq.ids[0], kCls);
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_EQ(seq.ids[i + 1], v.id(direct[i]));
}

TEST(Encode, DeterministicAndDecodeRoundTrips) {
    Rng rng(9);
    std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps"};
    std::vector<std::string> corpus;
    for (int i = 0; i < 30; ++i) {
        std::string s;
        for (int j = 0; j < 6; ++j) s += words[rng.index(words.size())] + (rng.index(2) ? "  " : " ");
        corpus.push_back(s);
    }
    auto v = Vocab::build(corpus, 1);
    for (const auto& text : corpus) {
        auto a = encode(text, v, 64);
        auto b = encode(text, v, 64);
        EXPECT_EQ(a.ids, b.ids);
        std::string normalized;
        for (const auto& t : tokenize(text)) normalized += (normalized.empty() ? "" : " ") + t;
        EXPECT_EQ(decode(a, v), normalized);
    }
}
