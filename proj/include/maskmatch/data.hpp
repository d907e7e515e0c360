#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maskmatch/keyvalue.hpp"
#include "maskmatch/metrics.hpp"
#include "maskmatch/numerics/rng.hpp"
#include "maskmatch/prompts.hpp"

namespace maskmatch {

using Split = std::vector<RawExample>;

// key=value file naming the task, its labels and the three split files.
//
//   name=r8-mini
//   family=topic_or_sentiment
//   metric=accuracy
//   labels=earn|acq|crude
//   augment=profit,income|merger,takeover|oil,petroleum    (optional)
//   train=train.tsv
//   dev=dev.tsv
//   test=test.tsv
struct DatasetManifest {
    std::string name;
    TaskFamily family = TaskFamily::kTopicOrSentiment;
    Metric metric = Metric::kAccuracy;
    std::vector<std::string> labels;
    std::vector<Augmentation> augmentation;
    std::filesystem::path train, dev, test;

    std::size_t classes() const noexcept { return labels.size(); }

    LabelSet label_set(LabelTemplate templ = LabelTemplate::kP1, bool augment = false) const {
        LabelSet set;
        set.names = labels;
        set.templ = templ;
        set.augmentation = augmentation;
        set.augment = augment;
        set.validate();
        return set;
    }

    const std::filesystem::path& split_path(std::string_view split) const {
        if (split == "train") return train;
        if (split == "dev") return dev;
        if (split == "test") return test;
        fail(ErrorKind::kConfig, "unknown split '" + std::string(split) + "' (expected train, dev or test)");
    }

    static DatasetManifest parse(const KeyValues& kv, const std::filesystem::path& base) {
        DatasetManifest m;
        try {
            m.name = kv.get_or("name", "dataset");
            m.family = parse_family(kv.get("family"));
            m.metric = parse_metric(kv.get("metric"));
        } catch (const Error& e) {
            fail(ErrorKind::kData, e.what());
        }
        m.labels = split(kv.get("labels"), '|');
        for (auto& l : m.labels) l = std::string(trim(l));
        if (const auto* aug = kv.find("augment")) {
            const auto groups = split(*aug, '|');
            if (groups.size() != m.labels.size()) {
                fail(ErrorKind::kData, "manifest: augment lists " + std::to_string(groups.size()) + " groups for " +
                                           std::to_string(m.labels.size()) + " labels");
            }
            for (const auto& g : groups) {
                const auto words = split(g, ',');
                if (words.size() != 2) fail(ErrorKind::kData, "manifest: each augment group needs two words: " + g);
                m.augmentation.push_back({std::string(trim(words[0])), std::string(trim(words[1]))});
            }
        }
        m.train = base / kv.get("train");
        m.dev = base / kv.get("dev");
        m.test = base / kv.get("test");
        try {
            m.label_set();
        } catch (const Error& e) {
            fail(ErrorKind::kData, std::string("manifest: ") + e.what());
        }
        return m;
    }

    static DatasetManifest load(const std::filesystem::path& path) {
        const auto kv = KeyValues::load_file(path.string(), ErrorKind::kData);
        return parse(kv, path.parent_path());
    }

    // Split paths are written relative to the manifest directory when possible.
    void save(const std::filesystem::path& path) const {
        const auto base = path.parent_path();
        auto rel = [&](const std::filesystem::path& p) {
            return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string();
        };
        KeyValues kv;
        kv.set("name", name);
        kv.set("family", std::string(to_string(family)));
        kv.set("metric", std::string(to_string(metric)));
        std::string joined;
        for (const auto& l : labels) joined += (joined.empty() ? "" : "|") + l;
        kv.set("labels", joined);
        if (!augmentation.empty()) {
            std::string aug;
            for (const auto& a : augmentation) aug += (aug.empty() ? "" : "|") + a[0] + "," + a[1];
            kv.set("augment", aug);
        }
        kv.set("train", rel(train));
        kv.set("dev", rel(dev));
        kv.set("test", rel(test));
        std::ofstream os(path, std::ios::binary);
        if (!os) fail(ErrorKind::kData, "cannot write manifest " + path.string());
        kv.write(os);
    }
};

struct Dataset {
    DatasetManifest manifest;
    Split train, dev, test;

    const Split& split(std::string_view name) const {
        if (name == "train") return train;
        if (name == "dev") return dev;
        if (name == "test") return test;
        fail(ErrorKind::kConfig, "unknown split '" + std::string(name) + "' (expected train, dev or test)");
    }
};

inline std::vector<std::string> example_columns(TaskFamily family) {
    auto cols = required_fields(family);
    cols.push_back("gold");
    return cols;
}

// Tab-separated records with a header line naming the columns. Column order is
// free; the set must match the family's fields plus gold.
inline Split read_examples(std::istream& is, const std::string& origin, TaskFamily family, std::size_t classes) {
    auto where = [&](std::size_t line) { return origin + ":" + std::to_string(line) + ": "; };
    std::string line;
    if (!std::getline(is, line)) fail(ErrorKind::kData, origin + ": empty file, expected a header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line, '\t');
    const auto wanted = example_columns(family);
    for (const auto& h : header) {
        if (std::find(wanted.begin(), wanted.end(), h) == wanted.end()) {
            fail(ErrorKind::kData, where(1) + "unexpected column '" + h + "' for family " +
                                       std::string(to_string(family)));
        }
    }
    for (const auto& w : wanted) {
        if (std::count(header.begin(), header.end(), w) != 1) {
            fail(ErrorKind::kData, where(1) + "header must contain column '" + w + "' exactly once");
        }
    }
    Split out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line, '\t');
        if (cells.size() != header.size()) {
            fail(ErrorKind::kData, where(lineno) + "expected " + std::to_string(header.size()) + " fields, found " +
                                       std::to_string(cells.size()));
        }
        RawExample ex;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& col = header[c];
            if (col == "gold") {
                std::size_t g = 0;
                const auto& s = cells[c];
                auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), g);
                if (ec != std::errc{} || ptr != s.data() + s.size()) {
                    fail(ErrorKind::kData, where(lineno) + "field 'gold': not a class index: '" + s + "'");
                }
                if (g >= classes) {
                    fail(ErrorKind::kData, where(lineno) + "field 'gold': index " + s + " out of range for " +
                                               std::to_string(classes) + " labels");
                }
                ex.gold = g;
            } else if (col == "x1") {
                ex.x1 = cells[c];
            } else {
                *ex.field(col) = cells[c];
            }
        }
        try {
            render_input(ex, family);
        } catch (const Error& e) {
            fail(ErrorKind::kData, where(lineno) + e.what());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline Split read_examples(const std::filesystem::path& path, TaskFamily family, std::size_t classes) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::kData, "cannot open " + path.string());
    return read_examples(is, path.string(), family, classes);
}

inline void write_examples(std::ostream& os, TaskFamily family, const Split& split) {
    const auto cols = example_columns(family);
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "\t" : "") << cols[c];
    os << '\n';
    for (const auto& ex : split) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            std::string cell;
            if (cols[c] == "gold") {
                cell = std::to_string(ex.gold);
            } else if (cols[c] == "x1") {
                cell = ex.x1;
            } else {
                cell = ex.field(cols[c])->value_or("");
            }
            if (cell.find_first_of("\t\n\r") != std::string::npos) {
                fail(ErrorKind::kData, "field '" + cols[c] + "' contains a tab or newline");
            }
            os << (c ? "\t" : "") << cell;
        }
        os << '\n';
    }
}

inline void write_examples(const std::filesystem::path& path, TaskFamily family, const Split& split) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::kData, "cannot write " + path.string());
    write_examples(os, family, split);
}

inline Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset d;
    d.manifest = manifest;
    d.train = read_examples(manifest.train, manifest.family, manifest.classes());
    d.dev = read_examples(manifest.dev, manifest.family, manifest.classes());
    d.test = read_examples(manifest.test, manifest.family, manifest.classes());
    if (d.train.empty()) fail(ErrorKind::kData, manifest.train.string() + ": training split is empty");
    return d;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    return load_dataset(DatasetManifest::load(manifest_path));
}

struct Subsample {
    Split examples;
    // Set when the per-class guard swapped examples in.
    bool guard_applied = false;
};

// Uniform sample of round(fraction * N) examples without replacement. When
// N * fraction >= classes, every class present in train keeps at least one
// example. Selected examples keep their original order.
inline Subsample subsample_low_resource(const Split& train, double fraction, std::uint64_t seed,
                                        std::size_t classes) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        fail(ErrorKind::kConfig, "low-resource fraction must be in (0, 1], got " + std::to_string(fraction));
    }
    const std::size_t n = train.size();
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::size_t> chosen(order.begin(), order.begin() + std::min(k, n));

    Subsample out;
    if (static_cast<double>(n) * fraction >= static_cast<double>(classes)) {
        std::map<std::size_t, std::size_t> count;
        for (std::size_t i : chosen) ++count[train[i].gold];
        for (std::size_t pos = chosen.size(); pos < n; ++pos) {
            const std::size_t cand = order[pos];
            const std::size_t c = train[cand].gold;
            if (count[c] > 0) continue;
            // Replace the latest pick whose class can spare one.
            for (std::size_t j = chosen.size(); j-- > 0;) {
                const std::size_t victim = train[chosen[j]].gold;
                if (count[victim] > 1) {
                    --count[victim];
                    chosen[j] = cand;
                    ++count[c];
                    out.guard_applied = true;
                    break;
                }
            }
        }
    }
    std::sort(chosen.begin(), chosen.end());
    out.examples.reserve(chosen.size());
    for (std::size_t i : chosen) out.examples.push_back(train[i]);
    return out;
}

// Classification task over an artificial vocabulary w0..w{V-1}. Class c owns a
// pool of four tokens: two form its label name, two are related words used for
// label-name augmentation. The remaining tokens are shared noise.
struct SyntheticSpec {
    std::string name = "synthetic";
    std::size_t classes = 2;
    std::size_t vocab_size = 200;
    std::size_t per_class = 100;
    std::size_t length = 12;
    double informativeness = 0.9;
    double noise = 0.1;
    std::uint64_t seed = 1;

    static constexpr std::size_t kPoolSize = 4;
    static constexpr std::size_t kNameTokens = 2;

    void validate() const {
        if (classes < 2) fail(ErrorKind::kConfig, "synthetic task needs at least 2 classes");
        if (per_class < 10) fail(ErrorKind::kConfig, "per_class must be at least 10 for a 80/10/10 split");
        if (length == 0) fail(ErrorKind::kConfig, "length must be positive");
        if (!(informativeness >= 0.0 && informativeness <= 1.0)) {
            fail(ErrorKind::kConfig, "informativeness must be in [0, 1]");
        }
        if (!(noise >= 0.0 && noise <= 1.0)) fail(ErrorKind::kConfig, "noise must be in [0, 1]");
        if (classes * kPoolSize + 1 > vocab_size) {
            fail(ErrorKind::kConfig, std::to_string(classes) + " classes need a vocabulary of at least " +
                                         std::to_string(classes * kPoolSize + 1) + " tokens, got " +
                                         std::to_string(vocab_size));
        }
    }

    static SyntheticSpec parse(const KeyValues& kv) {
        SyntheticSpec s;
        s.name = kv.get_or("name", s.name);
        s.classes = kv.number<std::size_t>("classes", s.classes);
        s.vocab_size = kv.number<std::size_t>("vocab_size", s.vocab_size);
        s.per_class = kv.number<std::size_t>("per_class", s.per_class);
        s.length = kv.number<std::size_t>("length", s.length);
        s.informativeness = kv.number<double>("informativeness", s.informativeness);
        s.noise = kv.number<double>("noise", s.noise);
        s.seed = kv.number<std::uint64_t>("seed", s.seed);
        for (const auto& [k, v] : kv.entries()) {
            static const std::set<std::string> known = {"name",   "classes",         "vocab_size", "per_class",
                                                        "length", "informativeness", "noise",      "seed",
                                                        "output"};
            if (!known.contains(k)) fail(ErrorKind::kConfig, "unknown synthetic spec key '" + k + "'");
        }
        s.validate();
        return s;
    }

    std::size_t pool_token(std::size_t cls, std::size_t j) const { return cls * kPoolSize + j; }
};

inline std::string synthetic_token(std::size_t i) { return "w" + std::to_string(i); }

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t n = spec.classes;
    const std::size_t first_noise = n * SyntheticSpec::kPoolSize;
    const std::size_t noise_count = spec.vocab_size - first_noise;

    Dataset d;
    auto& m = d.manifest;
    m.name = spec.name;
    m.family = TaskFamily::kTopicOrSentiment;
    m.metric = Metric::kAccuracy;
    for (std::size_t c = 0; c < n; ++c) {
        std::string label;
        for (std::size_t j = 0; j < SyntheticSpec::kNameTokens; ++j)
            label += (j ? " " : "") + synthetic_token(spec.pool_token(c, j));
        m.labels.push_back(label);
        m.augmentation.push_back({synthetic_token(spec.pool_token(c, 2)), synthetic_token(spec.pool_token(c, 3))});
    }

    auto draw = [&](std::size_t gold) {
        std::string text;
        for (std::size_t t = 0; t < spec.length; ++t) {
            std::size_t tok;
            if (rng.uniform() < spec.noise) {
                tok = spec.pool_token(rng.index(n), rng.index(SyntheticSpec::kPoolSize));
            } else if (rng.uniform() < spec.informativeness) {
                tok = spec.pool_token(gold, rng.index(SyntheticSpec::kPoolSize));
            } else {
                tok = first_noise + rng.index(noise_count);
            }
            text += (t ? " " : "") + synthetic_token(tok);
        }
        return text;
    };

    std::set<std::string> seen;
    constexpr int kMaxAttempts = 1000;
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<RawExample> pool;
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            std::string text;
            int attempt = 0;
            do {
                if (++attempt > kMaxAttempts) {
                    fail(ErrorKind::kConfig, "cannot draw " + std::to_string(spec.per_class) +
                                                 " distinct examples for class " + std::to_string(c) +
                                                 "; raise length or vocab_size");
                }
                text = draw(c);
            } while (!seen.insert(text).second);
            RawExample ex;
            ex.x1 = text;
            ex.gold = c;
            pool.push_back(std::move(ex));
        }
        const std::size_t train_n = static_cast<std::size_t>(std::llround(0.8 * spec.per_class));
        const std::size_t dev_n = static_cast<std::size_t>(std::llround(0.1 * spec.per_class));
        for (std::size_t i = 0; i < pool.size(); ++i) {
            Split& target = i < train_n ? d.train : i < train_n + dev_n ? d.dev : d.test;
            target.push_back(pool[i]);
        }
    }
    rng.shuffle(d.train);
    rng.shuffle(d.dev);
    rng.shuffle(d.test);
    return d;
}

// Writes manifest.txt plus train/dev/test.tsv into dir and returns the
// manifest path.
inline std::filesystem::path write_dataset(Dataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    d.manifest.train = dir / "train.tsv";
    d.manifest.dev = dir / "dev.tsv";
    d.manifest.test = dir / "test.tsv";
    write_examples(d.manifest.train, d.manifest.family, d.train);
    write_examples(d.manifest.dev, d.manifest.family, d.dev);
    write_examples(d.manifest.test, d.manifest.family, d.test);
    const auto path = dir / "manifest.txt";
    d.manifest.save(path);
    return path;
}

}  // namespace maskmatch
