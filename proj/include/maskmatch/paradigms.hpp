#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maskmatch/encoder.hpp"
#include "maskmatch/prompts.hpp"

namespace maskmatch {

enum class ParadigmKind { kFineTune, kPromptTune, kSemanticMatch, kMaskMatch };

inline constexpr std::array<ParadigmKind, 4> kAllParadigms = {
    ParadigmKind::kFineTune, ParadigmKind::kPromptTune, ParadigmKind::kSemanticMatch, ParadigmKind::kMaskMatch};

// Short id used on the command line and in result files.
inline std::string_view to_string(ParadigmKind k) {
    switch (k) {
        case ParadigmKind::kFineTune: return "ft";
        case ParadigmKind::kPromptTune: return "pt";
        case ParadigmKind::kSemanticMatch: return "sm";
        case ParadigmKind::kMaskMatch: return "mm";
    }
    return "?";
}

inline std::string_view long_name(ParadigmKind k) {
    switch (k) {
        case ParadigmKind::kFineTune: return "fine_tune";
        case ParadigmKind::kPromptTune: return "prompt_tune";
        case ParadigmKind::kSemanticMatch: return "semantic_match";
        case ParadigmKind::kMaskMatch: return "mask_match";
    }
    return "?";
}

inline ParadigmKind parse_paradigm(std::string_view s) {
    for (auto k : kAllParadigms)
        if (to_string(k) == s || long_name(k) == s) return k;
    fail(ErrorKind::kConfig, "unknown paradigm '" + std::string(s) + "' (expected ft, pt, sm or mm)");
}

inline bool prompted(ParadigmKind k) { return k != ParadigmKind::kFineTune; }
inline bool encoder_derived_bank(ParadigmKind k) {
    return k == ParadigmKind::kSemanticMatch || k == ParadigmKind::kMaskMatch;
}

struct ParadigmOptions {
    // Logits are divided by this. 1 gives the raw dot product.
    double temperature = 1.0;
    PoolMode pool = PoolMode::kMax;
    // SemanticMatch pools over the whole label prompt instead of the name.
    bool pool_full_prompt = false;

    void validate() const {
        if (!(temperature > 0.0) || !std::isfinite(temperature)) {
            fail(ErrorKind::kConfig, "temperature must be positive");
        }
    }
};

struct ParadigmLayout {
    std::optional<ParamId> head_weight;     // FineTune [n x d]
    std::optional<ParamId> head_bias;       // FineTune [n]
    std::optional<ParamId> virtual_labels;  // PromptTune [n x d]
};

template <typename T>
ParadigmLayout add_paradigm_parameters(ParadigmKind kind, std::size_t classes, std::size_t hidden,
                                       ParameterSet<T>& params, Rng& rng) {
    ParadigmLayout layout;
    if (kind == ParadigmKind::kFineTune) {
        layout.head_weight = params.add("head.weight", truncated_normal<T>({classes, hidden}, rng));
        layout.head_bias = params.add("head.bias", Tensor<T>({classes}));
    } else if (kind == ParadigmKind::kPromptTune) {
        layout.virtual_labels = params.add("prompt.labels", truncated_normal<T>({classes, hidden}, rng));
    }
    return layout;
}

inline ParadigmLayout find_paradigm_parameters(ParadigmKind kind, const auto& params) {
    ParadigmLayout layout;
    if (kind == ParadigmKind::kFineTune) {
        layout.head_weight = params.id_of("head.weight");
        layout.head_bias = params.id_of("head.bias");
    } else if (kind == ParadigmKind::kPromptTune) {
        layout.virtual_labels = params.id_of("prompt.labels");
    }
    return layout;
}

template <typename T>
struct LabelBank {
    Var<T> vectors;  // [n x d]
    std::optional<Var<T>> bias;
};

// Bank values detached from any tape, for evaluation.
template <typename T>
struct CachedBank {
    Tensor<T> vectors;
    std::optional<Tensor<T>> bias;

    std::size_t size() const noexcept { return vectors.rows(); }
};

template <typename T>
struct Prediction {
    Tensor<T> probabilities;
    std::size_t argmax = 0;
    bool tie = false;
};

inline constexpr double kTieTolerance = 1e-12;

// Mask state for the prompted paradigms, [CLS] state for FineTune.
template <typename T, typename Params>
Var<T> input_repr(ParadigmKind kind, const Encoder& encoder, Tape<T>& tape, Params& params,
                  const TokenSequence& seq, Rng* dropout_rng = nullptr) {
    if (kind == ParadigmKind::kFineTune) {
        if (!seq.mask_positions.empty()) {
            fail(ErrorKind::kContract, "fine-tuning expects a non-prompted encoding but found [MASK]");
        }
        return cls_state(encoder.forward(tape, params, seq, nullptr, dropout_rng), seq);
    }
    if (seq.mask_positions.size() != 1) {
        fail(ErrorKind::kContract, std::string(long_name(kind)) + " expects a prompted encoding with one [MASK], got " +
                                       std::to_string(seq.mask_positions.size()));
    }
    return mask_state(encoder.forward(tape, params, seq, nullptr, dropout_rng), seq);
}

template <typename T, typename Params>
LabelBank<T> label_bank(ParadigmKind kind, const Encoder& encoder, Tape<T>& tape, Params& params,
                        const ParadigmLayout& layout, const std::vector<LabelSequence>& labels,
                        const ParadigmOptions& opts = {}, Rng* dropout_rng = nullptr) {
    switch (kind) {
        case ParadigmKind::kFineTune:
            return {tape.parameter(params[*layout.head_weight]), tape.parameter(params[*layout.head_bias])};
        case ParadigmKind::kPromptTune: return {tape.parameter(params[*layout.virtual_labels]), std::nullopt};
        case ParadigmKind::kSemanticMatch:
        case ParadigmKind::kMaskMatch: break;
    }
    if (labels.empty()) fail(ErrorKind::kContract, "label bank needs at least one label prompt");
    std::vector<Var<T>> rows;
    rows.reserve(labels.size());
    for (const auto& l : labels) {
        Var<T> hidden = encoder.forward(tape, params, l.seq, nullptr, dropout_rng);
        if (kind == ParadigmKind::kMaskMatch) {
            rows.push_back(mask_state(hidden, l.seq));
        } else {
            rows.push_back(pooled_state(hidden, opts.pool_full_prompt ? l.prompt_span : l.name_span, opts.pool));
        }
    }
    return {stack_rows(rows), std::nullopt};
}

template <typename T>
Var<T> logits(Var<T> h, const LabelBank<T>& bank, const ParadigmOptions& opts = {}) {
    if (h.value().rank() != 1 || h.value().size() != bank.vectors.value().cols()) {
        fail(ErrorKind::kContract, "input width " + shape_string(h.shape()) + " does not match label bank " +
                                       shape_string(bank.vectors.shape()));
    }
    Var<T> z = matmul_nt(h, bank.vectors);
    if (bank.bias) z = add(z, *bank.bias);
    if (opts.temperature != 1.0) z = scale(z, static_cast<T>(1.0 / opts.temperature));
    return z;
}

// Cross-entropy of softmax(h . m_i) against the gold class.
template <typename T>
Var<T> loss(Var<T> h, const LabelBank<T>& bank, std::size_t gold, const ParadigmOptions& opts = {}) {
    return softmax_cross_entropy(logits(h, bank, opts), gold);
}

template <typename T>
Prediction<T> predict(const Tensor<T>& h, const CachedBank<T>& bank, const ParadigmOptions& opts = {}) {
    if (h.rank() != 1 || h.size() != bank.vectors.cols()) {
        fail(ErrorKind::kContract, "input width " + shape_string(h.shape()) + " does not match label bank " +
                                       shape_string(bank.vectors.shape()));
    }
    Tensor<T> z = ops::matmul_nt(h, bank.vectors);
    if (bank.bias) z += *bank.bias;
    if (opts.temperature != 1.0) {
        for (auto& v : z.data()) v /= static_cast<T>(opts.temperature);
    }
    Prediction<T> out;
    out.probabilities = ops::softmax(z);
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
        if (z[i] > z[best]) best = i;
    out.argmax = best;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (i != best && std::abs(static_cast<double>(z[best] - z[i])) < kTieTolerance) out.tie = true;
    }
    return out;
}

template <typename T>
CachedBank<T> detach(const LabelBank<T>& bank) {
    CachedBank<T> out{bank.vectors.value(), std::nullopt};
    if (bank.bias) out.bias = bank.bias->value();
    return out;
}

// Encoder, paradigm parameters and label prompts for one run.
template <typename T>
class Model {
   public:
    struct Spec {
        ParadigmKind kind = ParadigmKind::kMaskMatch;
        TaskFamily family = TaskFamily::kTopicOrSentiment;
        EncoderConfig encoder;
        LabelSet labels;
        ParadigmOptions options;
        RenderOptions render;
        std::size_t max_input_length = kDefaultMaxInputLength;
        TemplateLibrary templates;
    };

    // Fresh parameters drawn from rng.
    Model(Spec spec, Vocab vocab, Rng& rng) : spec_(std::move(spec)), vocab_(std::move(vocab)) {
        spec_.encoder.vocab_size = vocab_.size();
        validate();
        encoder_ = Encoder(spec_.encoder, params_, rng);
        layout_ = add_paradigm_parameters(spec_.kind, spec_.labels.size(), spec_.encoder.hidden_dim, params_, rng);
        label_seqs_ = render_label_set(spec_.labels, vocab_, spec_.max_input_length, spec_.templates);
    }

    // Parameters restored from a checkpoint. Every tensor must be present with
    // the shape a fresh model would have.
    Model(Spec spec, Vocab vocab, ParameterSet<T> restored) : spec_(std::move(spec)), vocab_(std::move(vocab)) {
        Rng rng(0);
        Model fresh(spec_, vocab_, rng);
        if (restored.size() != fresh.params_.size()) {
            fail(ErrorKind::kData, "checkpoint holds " + std::to_string(restored.size()) + " tensors, model needs " +
                                       std::to_string(fresh.params_.size()));
        }
        for (const auto& p : fresh.params_) {
            if (!restored.contains(p.name)) fail(ErrorKind::kData, "checkpoint is missing tensor " + p.name);
            if (restored[p.name].value.shape() != p.value.shape()) {
                fail(ErrorKind::kData, "checkpoint tensor " + p.name + " has shape " +
                                           shape_string(restored[p.name].value.shape()) + ", expected " +
                                           shape_string(p.value.shape()));
            }
        }
        *this = std::move(fresh);
        for (auto& p : params_) p.value = restored[p.name].value;
    }

    const Spec& spec() const noexcept { return spec_; }
    ParadigmKind kind() const noexcept { return spec_.kind; }
    const Vocab& vocab() const noexcept { return vocab_; }
    const Encoder& encoder() const noexcept { return encoder_; }
    const ParadigmLayout& layout() const noexcept { return layout_; }
    const std::vector<LabelSequence>& label_sequences() const noexcept { return label_seqs_; }
    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }
    std::size_t classes() const noexcept { return spec_.labels.size(); }

    // Prompted rendering for the matching paradigms, plain for FineTune.
    TokenSequence encode(const RawExample& ex) const {
        const PromptedExample p = prompted(spec_.kind)
                                      ? render_input(ex, spec_.family, spec_.render, spec_.templates)
                                      : render_plain(ex, spec_.family, spec_.render);
        return maskmatch::encode(p, vocab_, spec_.max_input_length);
    }

    // Bank on a training tape. Gradients reach every parameter it reads.
    LabelBank<T> bank(Tape<T>& tape, Rng* dropout_rng = nullptr) {
        return label_bank(spec_.kind, encoder_, tape, params_, layout_, label_seqs_, spec_.options, dropout_rng);
    }

    CachedBank<T> cached_bank() const {
        Tape<T> tape;
        return detach(label_bank(spec_.kind, encoder_, tape, params_, layout_, label_seqs_, spec_.options));
    }

    Var<T> repr(Tape<T>& tape, const TokenSequence& seq, Rng* dropout_rng = nullptr) {
        return input_repr(spec_.kind, encoder_, tape, params_, seq, dropout_rng);
    }

    Var<T> example_loss(Tape<T>& tape, const TokenSequence& seq, std::size_t gold, const LabelBank<T>& bank,
                        Rng* dropout_rng = nullptr) {
        if (gold >= classes()) {
            fail(ErrorKind::kIndex, "gold index " + std::to_string(gold) + " out of range for " +
                                        std::to_string(classes()) + " classes");
        }
        return loss(repr(tape, seq, dropout_rng), bank, gold, spec_.options);
    }

    Prediction<T> predict(const TokenSequence& seq, const CachedBank<T>& bank) const {
        Tape<T> tape;
        const Tensor<T> h = input_repr(spec_.kind, encoder_, tape, params_, seq).value();
        return maskmatch::predict(h, bank, spec_.options);
    }

   private:
    void validate() const {
        spec_.encoder.validate(spec_.max_input_length);
        spec_.options.validate();
        spec_.labels.validate();
        if (spec_.max_input_length < 2) fail(ErrorKind::kConfig, "max_input_length must be at least 2");
    }

    Spec spec_;
    Vocab vocab_;
    Encoder encoder_;
    ParameterSet<T> params_;
    ParadigmLayout layout_;
    std::vector<LabelSequence> label_seqs_;
};

}  // namespace maskmatch
