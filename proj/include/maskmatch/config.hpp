#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "maskmatch/encoder.hpp"
#include "maskmatch/keyvalue.hpp"
#include "maskmatch/paradigms.hpp"

namespace maskmatch {

enum class Selection { kBestDev, kFinalEpoch };
enum class Precision { kDouble, kFloat };

// Every knob of one training run. Read from and written to key=value text.
struct TrainRunConfig {
    ParadigmKind paradigm = ParadigmKind::kMaskMatch;
    EncoderConfig encoder;
    std::size_t batch_size = 8;
    std::size_t grad_accum = 4;
    double peak_lr = 1e-5;
    double warmup_ratio = 0.2;
    std::size_t epochs = 20;
    std::size_t max_input_length = kDefaultMaxInputLength;
    std::uint64_t seed = 1;
    LabelTemplate label_template = LabelTemplate::kP1;
    bool augment = false;
    std::optional<double> low_resource;

    double weight_decay = 0.01;
    double clip_norm = 1.0;  // 0 disables clipping
    double temperature = 1.0;
    PoolMode pool = PoolMode::kMax;
    bool pool_full_prompt = false;
    bool pair_separator = true;
    std::size_t min_count = 1;
    Selection selection = Selection::kBestDev;
    std::size_t patience = 0;          // 0 disables
    std::optional<double> target_dev;  // stop once the dev metric reaches it
    Precision precision = Precision::kDouble;
    std::string templates;  // template resource file; empty means built-in

    std::size_t effective_batch() const { return batch_size * grad_accum; }

    void validate() const {
        if (batch_size == 0 || grad_accum == 0 || epochs == 0) {
            fail(ErrorKind::kConfig, "batch_size, grad_accum and epochs must be positive");
        }
        if (!(peak_lr > 0.0)) fail(ErrorKind::kConfig, "peak_lr must be positive");
        if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) fail(ErrorKind::kConfig, "warmup_ratio must be in [0, 1]");
        if (!(weight_decay >= 0.0)) fail(ErrorKind::kConfig, "weight_decay must be non-negative");
        if (!(clip_norm >= 0.0)) fail(ErrorKind::kConfig, "clip_norm must be non-negative");
        if (low_resource && !(*low_resource > 0.0 && *low_resource <= 1.0)) {
            fail(ErrorKind::kConfig, "low_resource fraction must be in (0, 1]");
        }
        if (min_count == 0) fail(ErrorKind::kConfig, "min_count must be positive");
        EncoderConfig probe = encoder;
        probe.vocab_size = 1;
        probe.validate(max_input_length);
        ParadigmOptions{temperature, pool, pool_full_prompt}.validate();
    }

    static TrainRunConfig parse(const KeyValues& kv) {
        static const std::set<std::string> known = {
            "paradigm",    "layers",        "hidden_dim",   "heads",        "ffn_dim",    "max_positions",
            "dropout",     "batch_size",    "grad_accum",   "peak_lr",      "warmup_ratio", "epochs",
            "max_input_length", "seed",     "template",     "augment",      "low_resource", "weight_decay",
            "clip_norm",   "temperature",   "pool",         "pool_full_prompt", "pair_separator", "min_count",
            "selection",   "patience",      "target_dev",   "precision",    "templates"};
        for (const auto& [k, v] : kv.entries()) {
            if (!known.contains(k)) fail(ErrorKind::kConfig, "unknown config key '" + k + "'");
        }
        TrainRunConfig c;
        c.paradigm = parse_paradigm(kv.get_or("paradigm", std::string(to_string(c.paradigm))));
        c.encoder.layers = kv.number<std::size_t>("layers", c.encoder.layers);
        c.encoder.hidden_dim = kv.number<std::size_t>("hidden_dim", c.encoder.hidden_dim);
        c.encoder.heads = kv.number<std::size_t>("heads", c.encoder.heads);
        c.encoder.ffn_dim = kv.number<std::size_t>("ffn_dim", c.encoder.ffn_dim);
        c.encoder.dropout = kv.number<double>("dropout", c.encoder.dropout);
        c.batch_size = kv.number<std::size_t>("batch_size", c.batch_size);
        c.grad_accum = kv.number<std::size_t>("grad_accum", c.grad_accum);
        c.peak_lr = kv.number<double>("peak_lr", c.peak_lr);
        c.warmup_ratio = kv.number<double>("warmup_ratio", c.warmup_ratio);
        c.epochs = kv.number<std::size_t>("epochs", c.epochs);
        c.max_input_length = kv.number<std::size_t>("max_input_length", c.max_input_length);
        c.encoder.max_positions = kv.number<std::size_t>("max_positions", std::max(c.encoder.max_positions,
                                                                                    c.max_input_length));
        c.seed = kv.number<std::uint64_t>("seed", c.seed);
        c.label_template = parse_label_template(kv.get_or("template", "P1"));
        c.augment = kv.flag("augment", c.augment);
        if (kv.has("low_resource")) {
            const double f = kv.number<double>("low_resource");
            if (f != 0.0) c.low_resource = f;
        }
        c.weight_decay = kv.number<double>("weight_decay", c.weight_decay);
        c.clip_norm = kv.number<double>("clip_norm", c.clip_norm);
        c.temperature = kv.number<double>("temperature", c.temperature);
        const std::string pool = kv.get_or("pool", "max");
        if (pool != "max" && pool != "mean") fail(ErrorKind::kConfig, "pool must be max or mean, got '" + pool + "'");
        c.pool = pool == "max" ? PoolMode::kMax : PoolMode::kMean;
        c.pool_full_prompt = kv.flag("pool_full_prompt", c.pool_full_prompt);
        c.pair_separator = kv.flag("pair_separator", c.pair_separator);
        c.min_count = kv.number<std::size_t>("min_count", c.min_count);
        const std::string sel = kv.get_or("selection", "best_dev");
        if (sel != "best_dev" && sel != "final_epoch") {
            fail(ErrorKind::kConfig, "selection must be best_dev or final_epoch, got '" + sel + "'");
        }
        c.selection = sel == "best_dev" ? Selection::kBestDev : Selection::kFinalEpoch;
        c.patience = kv.number<std::size_t>("patience", c.patience);
        if (kv.has("target_dev")) c.target_dev = kv.number<double>("target_dev");
        const std::string prec = kv.get_or("precision", "double");
        if (prec != "double" && prec != "float") {
            fail(ErrorKind::kConfig, "precision must be double or float, got '" + prec + "'");
        }
        c.precision = prec == "double" ? Precision::kDouble : Precision::kFloat;
        c.templates = kv.get_or("templates", "");
        c.validate();
        return c;
    }

    static TrainRunConfig load_file(const std::string& path) { return parse(KeyValues::load_file(path)); }

    KeyValues to_keyvalues() const {
        auto num = [](auto v) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        };
        KeyValues kv;
        kv.set("paradigm", std::string(to_string(paradigm)));
        kv.set("layers", num(encoder.layers));
        kv.set("hidden_dim", num(encoder.hidden_dim));
        kv.set("heads", num(encoder.heads));
        kv.set("ffn_dim", num(encoder.ffn_dim));
        kv.set("max_positions", num(encoder.max_positions));
        kv.set("dropout", num(encoder.dropout));
        kv.set("batch_size", num(batch_size));
        kv.set("grad_accum", num(grad_accum));
        kv.set("peak_lr", num(peak_lr));
        kv.set("warmup_ratio", num(warmup_ratio));
        kv.set("epochs", num(epochs));
        kv.set("max_input_length", num(max_input_length));
        kv.set("seed", num(seed));
        kv.set("template", std::string(to_string(label_template)));
        kv.set("augment", augment ? "true" : "false");
        kv.set("low_resource", num(low_resource.value_or(0.0)));
        kv.set("weight_decay", num(weight_decay));
        kv.set("clip_norm", num(clip_norm));
        kv.set("temperature", num(temperature));
        kv.set("pool", pool == PoolMode::kMax ? "max" : "mean");
        kv.set("pool_full_prompt", pool_full_prompt ? "true" : "false");
        kv.set("pair_separator", pair_separator ? "true" : "false");
        kv.set("min_count", num(min_count));
        kv.set("selection", selection == Selection::kBestDev ? "best_dev" : "final_epoch");
        kv.set("patience", num(patience));
        if (target_dev) kv.set("target_dev", num(*target_dev));
        kv.set("precision", precision == Precision::kDouble ? "double" : "float");
        if (!templates.empty()) kv.set("templates", templates);
        return kv;
    }

    // FNV-1a over the canonical key=value text.
    std::string digest() const {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : to_keyvalues().str()) {
            h ^= c;
            h *= 1099511628211ull;
        }
        std::ostringstream os;
        os << std::hex;
        os.width(16);
        os.fill('0');
        os << h;
        return os.str();
    }

    ParadigmOptions paradigm_options() const { return {temperature, pool, pool_full_prompt}; }
};

}  // namespace maskmatch
