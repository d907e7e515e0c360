#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "maskmatch/numerics/functions.hpp"
#include "maskmatch/numerics/rng.hpp"
#include "maskmatch/tokenizer.hpp"

namespace maskmatch {

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t hidden_dim = 128;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;
    double dropout = 0.0;

    void validate(std::size_t max_input_length) const {
        if (layers == 0 || hidden_dim == 0 || heads == 0 || ffn_dim == 0 || vocab_size == 0) {
            fail(ErrorKind::kConfig, "encoder sizes must be positive");
        }
        if (hidden_dim % heads != 0) {
            fail(ErrorKind::kConfig, "hidden_dim " + std::to_string(hidden_dim) +
                                         " is not divisible by heads " + std::to_string(heads));
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::kConfig, "dropout must be in [0, 1)");
        if (max_positions < max_input_length) {
            fail(ErrorKind::kConfig, "max_positions " + std::to_string(max_positions) +
                                         " is below max_input_length " + std::to_string(max_input_length));
        }
    }
};

inline constexpr double kInitStd = 0.02;
inline constexpr double kMaskedScore = -1e9;

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double stddev = kInitStd) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
    return t;
}

// Handles to the encoder's tensors inside a ParameterSet.
struct EncoderLayout {
    struct Layer {
        ParamId ln1_gain, ln1_bias;
        ParamId wq, bq, wk, bk, wv, bv, wo, bo;
        ParamId ln2_gain, ln2_bias;
        ParamId w1, b1, w2, b2;
    };
    ParamId token_embedding;
    ParamId position_embedding;
    std::vector<Layer> layers;
    ParamId final_gain, final_bias;
};

// Pre-norm transformer encoder. Holds only shapes and parameter handles; the
// tensors themselves live in a ParameterSet so one set can be shared by the
// input side and the label side.
class Encoder {
   public:
    Encoder() = default;

    // Registers freshly initialised encoder parameters.
    template <typename T>
    Encoder(const EncoderConfig& config, ParameterSet<T>& params, Rng& rng) : config_(config) {
        const std::size_t d = config.hidden_dim, f = config.ffn_dim;
        auto ones = [](std::size_t n) { return Tensor<T>({n}, T{1}); };
        auto zeros = [](std::size_t n) { return Tensor<T>({n}); };
        layout_.token_embedding = params.add("embed.token", truncated_normal<T>({config.vocab_size, d}, rng));
        layout_.position_embedding =
            params.add("embed.position", truncated_normal<T>({config.max_positions, d}, rng));
        for (std::size_t l = 0; l < config.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            EncoderLayout::Layer layer;
            layer.ln1_gain = params.add(p + "ln1.gain", ones(d));
            layer.ln1_bias = params.add(p + "ln1.bias", zeros(d));
            layer.wq = params.add(p + "attn.q.weight", truncated_normal<T>({d, d}, rng));
            layer.bq = params.add(p + "attn.q.bias", zeros(d));
            layer.wk = params.add(p + "attn.k.weight", truncated_normal<T>({d, d}, rng));
            layer.bk = params.add(p + "attn.k.bias", zeros(d));
            layer.wv = params.add(p + "attn.v.weight", truncated_normal<T>({d, d}, rng));
            layer.bv = params.add(p + "attn.v.bias", zeros(d));
            layer.wo = params.add(p + "attn.out.weight", truncated_normal<T>({d, d}, rng));
            layer.bo = params.add(p + "attn.out.bias", zeros(d));
            layer.ln2_gain = params.add(p + "ln2.gain", ones(d));
            layer.ln2_bias = params.add(p + "ln2.bias", zeros(d));
            layer.w1 = params.add(p + "ffn.in.weight", truncated_normal<T>({d, f}, rng));
            layer.b1 = params.add(p + "ffn.in.bias", zeros(f));
            layer.w2 = params.add(p + "ffn.out.weight", truncated_normal<T>({f, d}, rng));
            layer.b2 = params.add(p + "ffn.out.bias", zeros(d));
            layout_.layers.push_back(layer);
        }
        layout_.final_gain = params.add("final_ln.gain", ones(d));
        layout_.final_bias = params.add("final_ln.bias", zeros(d));
    }

    const EncoderConfig& config() const noexcept { return config_; }
    const EncoderLayout& layout() const noexcept { return layout_; }

    // Hidden states H[len x hidden_dim]. Params is ParameterSet<T> (tracked)
    // or const ParameterSet<T> (evaluation). [PAD] keys are masked out of
    // attention. When attention_out is given, each layer's per-head attention
    // probabilities are appended to it. Dropout is applied only when
    // dropout_rng is given.
    template <typename T, typename Params>
    Var<T> forward(Tape<T>& tape, Params& params, const TokenSequence& seq,
                   std::type_identity_t<std::vector<Tensor<T>>>* attention_out = nullptr,
                   Rng* dropout_rng = nullptr) const {
        const std::size_t len = seq.ids.size();
        if (len == 0) fail(ErrorKind::kContract, "cannot encode an empty sequence");
        if (len > config_.max_positions) {
            fail(ErrorKind::kIndex, "sequence length " + std::to_string(len) + " exceeds max_positions " +
                                        std::to_string(config_.max_positions));
        }
        for (int id : seq.ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
                fail(ErrorKind::kIndex, "encoding error: token id " + std::to_string(id) +
                                            " outside vocabulary of " + std::to_string(config_.vocab_size));
            }
        }
        auto P = [&](ParamId id) { return tape.parameter(params[id]); };
        auto drop = [&](Var<T> v) { return dropout_rng ? dropout(v, config_.dropout, *dropout_rng) : v; };

        std::vector<int> positions(len);
        for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);
        Var<T> x = drop(add(embedding(P(layout_.token_embedding), std::span<const int>(seq.ids)),
                            embedding(P(layout_.position_embedding), std::span<const int>(positions))));

        bool any_pad = false;
        Tensor<T> key_mask({len, len});
        for (std::size_t j = 0; j < len; ++j) {
            if (seq.ids[j] != kPad) continue;
            any_pad = true;
            for (std::size_t i = 0; i < len; ++i) key_mask(i, j) = static_cast<T>(kMaskedScore);
        }
        std::optional<Var<T>> mask_var;
        if (any_pad) mask_var = tape.constant(std::move(key_mask));

        const std::size_t heads = config_.heads;
        const std::size_t head_dim = config_.hidden_dim / heads;
        const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(head_dim));
        for (const auto& layer : layout_.layers) {
            Var<T> h = layer_norm(x, P(layer.ln1_gain), P(layer.ln1_bias));
            Var<T> q = linear(h, P(layer.wq), P(layer.bq));
            Var<T> k = linear(h, P(layer.wk), P(layer.bk));
            Var<T> v = linear(h, P(layer.wv), P(layer.bv));
            std::vector<Var<T>> head_out;
            head_out.reserve(heads);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                const std::size_t b = hd * head_dim, e = b + head_dim;
                Var<T> scores = scale(matmul_nt(slice_cols(q, b, e), slice_cols(k, b, e)), inv_sqrt);
                if (mask_var) scores = add(scores, *mask_var);
                Var<T> probs = softmax(scores);
                if (attention_out) attention_out->push_back(probs.value());
                head_out.push_back(matmul(probs, slice_cols(v, b, e)));
            }
            Var<T> attn = heads == 1 ? head_out.front() : concat_cols(head_out);
            x = add(x, drop(linear(attn, P(layer.wo), P(layer.bo))));

            Var<T> h2 = layer_norm(x, P(layer.ln2_gain), P(layer.ln2_bias));
            Var<T> ffn = linear(gelu(linear(h2, P(layer.w1), P(layer.b1))), P(layer.w2), P(layer.b2));
            x = add(x, drop(ffn));
        }
        return layer_norm(x, P(layout_.final_gain), P(layout_.final_bias));
    }

   private:
    EncoderConfig config_;
    EncoderLayout layout_;
};

// Row of H at the which-th [MASK] of seq.
template <typename T>
Var<T> mask_state(Var<T> hidden, const TokenSequence& seq, std::size_t which = 0) {
    if (seq.mask_positions.empty()) fail(ErrorKind::kContract, "sequence has no [MASK] token");
    if (which >= seq.mask_positions.size()) {
        fail(ErrorKind::kContract, "mask index " + std::to_string(which) + " but sequence has " +
                                       std::to_string(seq.mask_positions.size()) + " masks");
    }
    return row(hidden, seq.mask_positions[which]);
}

enum class PoolMode { kMax, kMean };

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
    friend bool operator==(TokenSpan, TokenSpan) = default;
};

template <typename T>
Var<T> pooled_state(Var<T> hidden, TokenSpan span, PoolMode mode) {
    if (span.begin >= span.end) fail(ErrorKind::kContract, "cannot pool over an empty span");
    return mode == PoolMode::kMax ? max_rows(hidden, span.begin, span.end)
                                  : mean_rows(hidden, span.begin, span.end);
}

template <typename T>
Var<T> cls_state(Var<T> hidden, const TokenSequence& seq) {
    if (seq.ids.empty() || seq.ids.front() != kCls) {
        fail(ErrorKind::kContract, "sequence does not begin with [CLS]");
    }
    for (std::size_t pos : seq.mask_positions) {
        if (pos == 0) fail(ErrorKind::kContract, "[CLS] and [MASK] share position 0");
    }
    return row(hidden, 0);
}

}  // namespace maskmatch
