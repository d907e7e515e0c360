#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "maskmatch/config.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/paradigms.hpp"

namespace maskmatch {

inline TemplateLibrary load_templates(const TrainRunConfig& config) {
    return config.templates.empty() ? TemplateLibrary() : TemplateLibrary::load_file(config.templates);
}

template <typename T>
typename Model<T>::Spec model_spec(const TrainRunConfig& config, const DatasetManifest& manifest,
                                   TemplateLibrary templates) {
    typename Model<T>::Spec spec;
    spec.kind = config.paradigm;
    spec.family = manifest.family;
    spec.encoder = config.encoder;
    spec.labels = manifest.label_set(config.label_template, config.augment);
    spec.options = config.paradigm_options();
    spec.render.pair_separator = config.pair_separator;
    spec.max_input_length = config.max_input_length;
    spec.templates = std::move(templates);
    return spec;
}

inline constexpr std::string_view kCheckpointMagic = "MASKMATCH-CHECKPOINT v1";

// Text header, vocabulary and template blocks, then every parameter tensor as
// little-endian float64.
//
//   MASKMATCH-CHECKPOINT v1
//   <run config as key=value>
//   model.family=... model.labels=... model.dataset=... model.metric=...
//   templates <lines>
//   vocab <entries>
//   params <count>
//   param <name> <rank> <dims...>
//   <raw bytes>
//   end
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const TrainRunConfig& config,
                     const DatasetManifest& manifest) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::kData, "cannot write checkpoint " + path.string());
    os << kCheckpointMagic << '\n';
    KeyValues header = config.to_keyvalues();
    header.set("model.dataset", manifest.name);
    header.set("model.family", std::string(to_string(manifest.family)));
    header.set("model.metric", std::string(to_string(manifest.metric)));
    std::string labels;
    for (const auto& l : manifest.labels) labels += (labels.empty() ? "" : "|") + l;
    header.set("model.labels", labels);
    if (!manifest.augmentation.empty()) {
        std::string aug;
        for (const auto& a : manifest.augmentation) aug += (aug.empty() ? "" : "|") + a[0] + "," + a[1];
        header.set("model.augment", aug);
    }
    header.write(os);

    const std::string templates = model.spec().templates.serialize();
    os << "templates " << std::count(templates.begin(), templates.end(), '\n') << '\n' << templates;
    os << "vocab " << model.vocab().size() << '\n';
    model.vocab().save(os);
    os << "params " << model.params().size() << '\n';
    for (const auto& p : model.params()) {
        os << "param " << p.name << ' ' << p.value.rank();
        for (auto d : p.value.shape()) os << ' ' << d;
        os << '\n';
        for (T v : p.value.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
            char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
            os.write(bytes, 8);
        }
        os << '\n';
    }
    os << "end\n";
    if (!os) fail(ErrorKind::kData, "failed writing checkpoint " + path.string());
}

template <typename T>
struct LoadedCheckpoint {
    TrainRunConfig config;
    DatasetManifest manifest;  // names, labels and metric; split paths are empty
    Model<T> model;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::kData, "cannot open checkpoint " + path.string());
    const std::string origin = path.string();
    auto bad = [&](const std::string& msg) -> void { fail(ErrorKind::kData, origin + ": " + msg); };
    std::string line;
    if (!std::getline(is, line) || line != kCheckpointMagic) bad("not a checkpoint (bad magic line)");

    KeyValues config_kv, model_kv;
    while (true) {
        if (!std::getline(is, line)) bad("truncated header");
        if (line.starts_with("templates ")) break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) bad("bad header line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        (key.starts_with("model.") ? model_kv : config_kv).set(key, value);
    }
    auto count_after = [&](std::string_view prefix) {
        if (!line.starts_with(prefix)) bad("expected '" + std::string(prefix) + "'");
        try {
            return static_cast<std::size_t>(std::stoull(line.substr(prefix.size())));
        } catch (const std::exception&) {
            bad("bad count in '" + line + "'");
        }
        return std::size_t{0};
    };
    auto read_block = [&](std::size_t lines) {
        std::string text;
        for (std::size_t i = 0; i < lines; ++i) {
            if (!std::getline(is, line)) bad("truncated block");
            text += line + "\n";
        }
        return text;
    };

    TrainRunConfig config;
    DatasetManifest manifest;
    TemplateLibrary templates;
    Vocab vocab;
    try {
        config = TrainRunConfig::parse(config_kv);
        templates = TemplateLibrary::parse(read_block(count_after("templates ")), origin);
        if (!std::getline(is, line)) bad("missing vocab block");
        std::istringstream vs(read_block(count_after("vocab ")));
        vocab = Vocab::load(vs);
        manifest.name = model_kv.get("model.dataset");
        manifest.family = parse_family(model_kv.get("model.family"));
        manifest.metric = parse_metric(model_kv.get("model.metric"));
        manifest.labels = split(model_kv.get("model.labels"), '|');
        if (const auto* aug = model_kv.find("model.augment")) {
            for (const auto& g : split(*aug, '|')) {
                const auto w = split(g, ',');
                if (w.size() != 2) bad("bad augmentation group '" + g + "'");
                manifest.augmentation.push_back({w[0], w[1]});
            }
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::kData) throw;
        fail(ErrorKind::kData, origin + ": " + e.what());
    }

    if (!std::getline(is, line)) bad("missing params block");
    const std::size_t count = count_after("params ");
    ParameterSet<T> params;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(is, line)) bad("truncated parameter list");
        std::istringstream ls(line);
        std::string tag, name;
        std::size_t rank = 0;
        ls >> tag >> name >> rank;
        if (tag != "param" || rank < 1 || rank > 2) bad("bad parameter header '" + line + "'");
        Shape shape(rank);
        for (auto& d : shape) ls >> d;
        if (!ls) bad("bad parameter shape in '" + line + "'");
        Tensor<T> value(shape);
        for (auto& v : value.data()) {
            char bytes[8];
            if (!is.read(bytes, 8)) bad("truncated data for " + name);
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
            v = static_cast<T>(std::bit_cast<double>(bits));
        }
        std::getline(is, line);
        params.add(name, std::move(value));
    }
    if (!std::getline(is, line) || line != "end") bad("missing end marker");

    auto spec = model_spec<T>(config, manifest, templates);
    return {config, manifest, Model<T>(std::move(spec), std::move(vocab), std::move(params))};
}

}  // namespace maskmatch
