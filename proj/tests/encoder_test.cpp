#include <gtest/gtest.h>

#include <cmath>

#include "maskmatch/encoder.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace maskmatch;

namespace {

EncoderConfig tiny_config(std::size_t layers = 2) {
    EncoderConfig c;
    c.layers = layers;
    c.hidden_dim = 8;
    c.heads = 2;
    c.ffn_dim = 12;
    c.max_positions = 16;
    c.vocab_size = 14;
    return c;
}

TokenSequence seq_of(std::vector<int> ids) {
    TokenSequence s;
    s.ids = std::move(ids);
    for (std::size_t i = 0; i < s.ids.size(); ++i)
        if (s.ids[i] == kMask) s.mask_positions.push_back(i);
    return s;
}

Tensor<double> hidden_of(const Encoder& enc, const ParameterSet<double>& params, const TokenSequence& seq,
                         std::vector<Tensor<double>>* attn = nullptr) {
    Tape<double> tape;
    return enc.forward(tape, params, seq, attn).value();
}

}  // namespace

TEST(Encoder, ParameterNamesAndShapes) {
    ParameterSet<double> params;
    Rng rng(1);
    Encoder enc(tiny_config(), params, rng);
    EXPECT_EQ(params["embed.token"].value.shape(), (Shape{14, 8}));
    EXPECT_EQ(params["layer1.ffn.in.weight"].value.shape(), (Shape{8, 12}));
    EXPECT_EQ(params["final_ln.gain"].value[0], 1.0);
    EXPECT_EQ(params["layer0.attn.q.bias"].value[3], 0.0);
    for (double v : params["layer0.attn.k.weight"].value.data()) EXPECT_LE(std::abs(v), 2 * kInitStd);
}

TEST(Encoder, ConfigValidation) {
    auto c = tiny_config();
    c.heads = 3;
    EXPECT_THROW(c.validate(16), Error);
    c = tiny_config();
    EXPECT_THROW(c.validate(500), Error);
    EXPECT_NO_THROW(tiny_config().validate(16));
}

TEST(Encoder, DeterministicForSameSeed) {
    ParameterSet<double> pa, pb;
    Rng ra(5), rb(5);
    Encoder ea(tiny_config(), pa, ra), eb(tiny_config(), pb, rb);
    auto seq = seq_of({kCls, 9, 10, kMask, 11});
    EXPECT_EQ(hidden_of(ea, pa, seq), hidden_of(eb, pb, seq));
}

TEST(Encoder, PositionSensitive) {
    ParameterSet<double> params;
    Rng rng(2);
    Encoder enc(tiny_config(), params, rng);
    auto a = hidden_of(enc, params, seq_of({kCls, 9, 10, kMask}));
    auto b = hidden_of(enc, params, seq_of({kCls, 10, 9, kMask}));
    double diff = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) diff += std::abs(a(3, c) - b(3, c));
    EXPECT_GT(diff, 1e-8);
}

TEST(Encoder, AttentionRowsSumToOne) {
    ParameterSet<double> params;
    Rng rng(3);
    Encoder enc(tiny_config(), params, rng);
    std::vector<Tensor<double>> attn;
    hidden_of(enc, params, seq_of({kCls, 9, kPad, kMask, 10}), &attn);
    ASSERT_EQ(attn.size(), 4u);
    for (const auto& a : attn)
        for (std::size_t r = 0; r < a.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c);
            EXPECT_NEAR(s, 1.0, 1e-10);
            EXPECT_LT(a(r, 2), 1e-12);
        }
}

TEST(Encoder, TrailingPaddingDoesNotChangeRealPositions) {
    ParameterSet<double> params;
    Rng rng(4);
    Encoder enc(tiny_config(), params, rng);
    auto a = hidden_of(enc, params, seq_of({kCls, 9, 10, kMask}));
    auto b = hidden_of(enc, params, seq_of({kCls, 9, 10, kMask, kPad, kPad, kPad}));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) EXPECT_NEAR(a(r, c), b(r, c), 1e-10);
}

TEST(Encoder, OutOfVocabularyIdIsEncodingError) {
    ParameterSet<double> params;
    Rng rng(4);
    Encoder enc(tiny_config(), params, rng);
    try {
        hidden_of(enc, params, seq_of({kCls, 99}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kIndex);
    }
}

TEST(Encoder, AbsentTokenGetsZeroEmbeddingGradient) {
    ParameterSet<double> params;
    Rng rng(6);
    Encoder enc(tiny_config(), params, rng);
    auto seq = seq_of({kCls, 9, kMask});
    Tape<double> tape;
    auto h = enc.forward(tape, params, seq);
    tape.backward(sum(mask_state(h, seq)));
    const auto& g = params["embed.token"].grad;
    for (std::size_t c = 0; c < g.cols(); ++c) {
        EXPECT_EQ(g(12, c), 0.0);
        EXPECT_EQ(g(kSep, c), 0.0);
    }
    double present = 0.0;
    for (std::size_t c = 0; c < g.cols(); ++c) present += std::abs(g(9, c));
    EXPECT_GT(present, 0.0);
}

TEST(Encoder, FullGradientMatchesFiniteDifferences) {
    Rng rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, maskmatch::testing::encoder_gradient_trial(rng));
    EXPECT_LT(worst, 1e-4);
}

TEST(States, MaskState) {
    Tape<double> tape;
    auto h = tape.constant(Tensor<double>::matrix({{1, 2}, {3, 4}, {5, 6}}));
    auto seq = seq_of({kCls, kMask, 9});
    EXPECT_EQ(mask_state(h, seq).value(), Tensor<double>::vector({3, 4}));
    EXPECT_THROW(mask_state(h, seq_of({kCls, 9, 10})), Error);
    EXPECT_THROW(mask_state(h, seq, 1), Error);
}

TEST(States, PooledState) {
    Tape<double> tape;
    auto h = tape.constant(Tensor<double>::matrix({{1, 2}, {2, 1}, {0, 3}}));
    EXPECT_EQ(pooled_state(h, TokenSpan{0, 2}, PoolMode::kMax).value(), Tensor<double>::vector({2, 2}));
    EXPECT_EQ(pooled_state(h, TokenSpan{0, 3}, PoolMode::kMax).value(), Tensor<double>::vector({2, 3}));
    EXPECT_EQ(pooled_state(h, TokenSpan{0, 2}, PoolMode::kMean).value(), Tensor<double>::vector({1.5, 1.5}));
    EXPECT_THROW(pooled_state(h, TokenSpan{1, 1}, PoolMode::kMean), Error);
}

TEST(States, ClsState) {
    Tape<double> tape;
    auto h = tape.constant(Tensor<double>::matrix({{7, 8}, {1, 1}}));
    EXPECT_EQ(cls_state(h, seq_of({kCls, 9})).value(), Tensor<double>::vector({7, 8}));
    EXPECT_THROW(cls_state(h, seq_of({9, kCls})), Error);
}
