#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskmatch/encoder.hpp"
#include "maskmatch/error.hpp"
#include "maskmatch/keyvalue.hpp"
#include "maskmatch/tokenizer.hpp"

namespace maskmatch {

enum class TaskFamily {
    kTopicOrSentiment,
    kEntityTyping,
    kRelationClassification,
    kNliOrParaphrase,
    kWordInContext,
    kStanceDetection,
};

inline constexpr std::array<TaskFamily, 6> kAllFamilies = {
    TaskFamily::kTopicOrSentiment, TaskFamily::kEntityTyping,   TaskFamily::kRelationClassification,
    TaskFamily::kNliOrParaphrase,  TaskFamily::kWordInContext, TaskFamily::kStanceDetection,
};

inline std::string_view to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::kTopicOrSentiment: return "topic_or_sentiment";
        case TaskFamily::kEntityTyping: return "entity_typing";
        case TaskFamily::kRelationClassification: return "relation_classification";
        case TaskFamily::kNliOrParaphrase: return "nli_or_paraphrase";
        case TaskFamily::kWordInContext: return "word_in_context";
        case TaskFamily::kStanceDetection: return "stance_detection";
    }
    return "?";
}

inline TaskFamily parse_family(std::string_view s) {
    for (auto f : kAllFamilies)
        if (to_string(f) == s) return f;
    fail(ErrorKind::kConfig, "unknown task family '" + std::string(s) + "'");
}

// Text fields required by a family, in dataset column order (gold excluded).
inline std::vector<std::string> required_fields(TaskFamily f) {
    switch (f) {
        case TaskFamily::kTopicOrSentiment: return {"x1"};
        case TaskFamily::kEntityTyping: return {"x1", "target"};
        case TaskFamily::kRelationClassification: return {"x1", "head", "head_type", "tail", "tail_type"};
        case TaskFamily::kNliOrParaphrase: return {"x1", "x2"};
        case TaskFamily::kWordInContext: return {"x1", "x2", "k1", "k2"};
        case TaskFamily::kStanceDetection: return {"x1", "target"};
    }
    return {};
}

struct RawExample {
    std::string x1;
    std::optional<std::string> x2;
    std::optional<std::string> target;  // entity-typing target or stance target
    std::optional<std::string> head, head_type, tail, tail_type;
    std::optional<std::string> k1, k2;
    std::size_t gold = 0;

    const std::optional<std::string>* field(std::string_view name) const {
        if (name == "x2") return &x2;
        if (name == "target") return &target;
        if (name == "head") return &head;
        if (name == "head_type") return &head_type;
        if (name == "tail") return &tail;
        if (name == "tail_type") return &tail_type;
        if (name == "k1") return &k1;
        if (name == "k2") return &k2;
        return nullptr;
    }

    std::optional<std::string>* field(std::string_view name) {
        return const_cast<std::optional<std::string>*>(std::as_const(*this).field(name));
    }

    friend bool operator==(const RawExample&, const RawExample&) = default;
};

// Rendered input: raw-input region followed by the prompt suffix. Only the
// region may be truncated.
struct PromptedExample {
    std::string input;
    std::string suffix;
    TaskFamily family = TaskFamily::kTopicOrSentiment;
    std::size_t gold = 0;

    std::string text() const {
        if (input.empty()) return suffix;
        if (suffix.empty()) return input;
        return input + " " + suffix;
    }
};

enum class LabelTemplate { kP1, kP2, kP3, kP4 };

inline constexpr std::array<LabelTemplate, 4> kAllLabelTemplates = {
    LabelTemplate::kP1, LabelTemplate::kP2, LabelTemplate::kP3, LabelTemplate::kP4};

inline std::string_view to_string(LabelTemplate t) {
    switch (t) {
        case LabelTemplate::kP1: return "P1";
        case LabelTemplate::kP2: return "P2";
        case LabelTemplate::kP3: return "P3";
        case LabelTemplate::kP4: return "P4";
    }
    return "?";
}

inline LabelTemplate parse_label_template(std::string_view s) {
    for (auto t : kAllLabelTemplates)
        if (to_string(t) == s) return t;
    fail(ErrorKind::kConfig, "unknown label template '" + std::string(s) + "' (expected P1..P4)");
}

using Augmentation = std::array<std::string, 2>;

struct LabelSet {
    std::vector<std::string> names;
    LabelTemplate templ = LabelTemplate::kP1;
    // Either empty or one pair of related words per label.
    std::vector<Augmentation> augmentation;
    bool augment = false;

    std::size_t size() const noexcept { return names.size(); }

    void validate() const {
        if (names.empty()) fail(ErrorKind::kSchema, "label set is empty");
        std::set<std::string> seen;
        for (const auto& n : names) {
            if (trim(n).empty()) fail(ErrorKind::kSchema, "label names must be non-empty");
            if (!seen.insert(n).second) fail(ErrorKind::kSchema, "duplicate label name '" + n + "'");
        }
        if (!augmentation.empty() && augmentation.size() != names.size()) {
            fail(ErrorKind::kSchema, "augmentation must list two words for every label");
        }
        if (augment && augmentation.empty()) {
            fail(ErrorKind::kSchema, "augmentation requested but no related words are defined");
        }
    }
};

inline constexpr std::string_view kDefaultTemplates = R"(# Prompt templates, format version 1.
# One "<id><TAB><format>" per line. Input templates start with {input}, the
# raw-input region; everything after it is the prompt suffix kept intact on
# truncation. Label templates wrap {label}.
version	1
input.topic_or_sentiment	{input} . It is [MASK].
input.entity_typing	{input} The type of {target} is [MASK].
input.relation_classification	{input} The relation between {head} and {tail} is [MASK].
input.nli_or_paraphrase	{input} The relation between two sentences is [MASK].
input.word_in_context	{input} {k1} is [MASK] to {k2}
input.stance_detection	{input} The stance of {target} is [MASK].
label.P1	{label} is [MASK].
label.P2	The meaning of {label} is [MASK].
label.P3	{label} means [MASK].
label.P4	{label} is similar to [MASK].
)";

inline constexpr int kTemplateFormatVersion = 1;

namespace detail {

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

inline std::string substitute(std::string format, const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        const std::string ph = "{" + key + "}";
        for (auto pos = format.find(ph); pos != std::string::npos; pos = format.find(ph, pos + value.size()))
            format.replace(pos, ph.size(), value);
    }
    if (format.find('{') != std::string::npos && format.find('}') != std::string::npos) {
        const auto b = format.find('{');
        const auto e = format.find('}', b);
        if (e != std::string::npos) {
            fail(ErrorKind::kSchema, "template placeholder " + format.substr(b, e - b + 1) + " has no value");
        }
    }
    return format;
}

inline bool is_boundary(std::string_view text, std::size_t pos) {
    if (pos == 0 || pos >= text.size()) return true;
    return is_space(text[pos]) || is_punct(text[pos]) || is_space(text[pos - 1]) || is_punct(text[pos - 1]);
}

// First whole-word occurrence of needle at or after from, avoiding [skip_b, skip_e).
inline std::size_t find_word(std::string_view text, std::string_view needle, std::size_t skip_b = 0,
                             std::size_t skip_e = 0) {
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) {
        const std::size_t end = pos + needle.size();
        const bool overlaps = pos < skip_e && end > skip_b;
        if (!overlaps && is_boundary(text, pos) && is_boundary(text, end)) return pos;
    }
    return std::string_view::npos;
}

}  // namespace detail

struct RenderOptions {
    // Join paired inputs as "x1 [SEP] x2" instead of plain concatenation.
    bool pair_separator = true;
};

// Template id -> format string, loaded from the versioned text resource.
class TemplateLibrary {
   public:
    TemplateLibrary() : TemplateLibrary(parse(kDefaultTemplates, "<builtin>")) {}

    static TemplateLibrary parse(std::string_view text, const std::string& origin) {
        TemplateLibrary lib(0);
        std::istringstream is{std::string(text)};
        std::string line;
        std::size_t lineno = 0;
        bool have_version = false;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line.front() == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                fail(ErrorKind::kConfig, origin + ":" + std::to_string(lineno) + ": expected <id><TAB><format>");
            }
            const std::string id = line.substr(0, tab);
            const std::string format = line.substr(tab + 1);
            if (id == "version") {
                if (format != std::to_string(kTemplateFormatVersion)) {
                    fail(ErrorKind::kConfig, origin + ": unsupported template version " + format);
                }
                have_version = true;
                continue;
            }
            lib.formats_[id] = format;
        }
        if (!have_version) fail(ErrorKind::kConfig, origin + ": missing version line");
        for (auto f : kAllFamilies) {
            const auto& fmt = lib.input_format(f);
            if (!fmt.starts_with("{input}")) {
                fail(ErrorKind::kConfig, origin + ": input template for " + std::string(to_string(f)) +
                                             " must start with {input}");
            }
            if (detail::count_occurrences(fmt, "[MASK]") != 1) {
                fail(ErrorKind::kConfig, origin + ": input template for " + std::string(to_string(f)) +
                                             " must contain exactly one [MASK]");
            }
        }
        for (auto t : kAllLabelTemplates) {
            const auto& fmt = lib.label_format(t);
            if (detail::count_occurrences(fmt, "{label}") != 1 || detail::count_occurrences(fmt, "[MASK]") != 1) {
                fail(ErrorKind::kConfig, origin + ": label template " + std::string(to_string(t)) +
                                             " needs one {label} and one [MASK]");
            }
        }
        return lib;
    }

    static TemplateLibrary load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) fail(ErrorKind::kConfig, "cannot open template file " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str(), path);
    }

    const std::string& format(const std::string& id) const {
        auto it = formats_.find(id);
        if (it == formats_.end()) fail(ErrorKind::kConfig, "template '" + id + "' is not defined");
        return it->second;
    }

    const std::string& input_format(TaskFamily f) const { return format("input." + std::string(to_string(f))); }
    const std::string& label_format(LabelTemplate t) const {
        return format("label." + std::string(to_string(t)));
    }

    // Canonical resource text; parse(serialize()) reproduces the library.
    std::string serialize() const {
        std::string out = "version\t" + std::to_string(kTemplateFormatVersion) + "\n";
        for (const auto& [id, fmt] : formats_) out += id + "\t" + fmt + "\n";
        return out;
    }

    friend bool operator==(const TemplateLibrary&, const TemplateLibrary&) = default;

   private:
    explicit TemplateLibrary(int) {}

    std::map<std::string, std::string> formats_;
};

inline const TemplateLibrary& default_templates() {
    static const TemplateLibrary lib;
    return lib;
}

namespace detail {

inline const std::string& require(const RawExample& ex, std::string_view field, TaskFamily family) {
    const auto* f = ex.field(field);
    if (field == "x1") {
        if (trim(ex.x1).empty() && family != TaskFamily::kTopicOrSentiment) {
            fail(ErrorKind::kSchema, "field 'x1' is required for family " + std::string(to_string(family)));
        }
        return ex.x1;
    }
    if (!f || !f->has_value() || (field != "head_type" && field != "tail_type" && trim(**f).empty())) {
        fail(ErrorKind::kSchema,
             "field '" + std::string(field) + "' is required for family " + std::string(to_string(family)));
    }
    return **f;
}

inline void reject_reserved(const std::string& text, std::string_view field) {
    for (auto tok : kReservedTokens) {
        if (text.find(tok) != std::string::npos) {
            fail(ErrorKind::kSchema, "field '" + std::string(field) + "' contains reserved token " + std::string(tok));
        }
    }
}

inline std::string with_type(const std::string& mention, const std::string& type) {
    return trim(type).empty() ? mention : mention + " (" + type + ")";
}

// x1 with "[E1] head (type) [/E1]" and "[E2] tail (type) [/E2]" inserted around
// the first whole-word, non-overlapping occurrences.
inline std::string mark_entities(const RawExample& ex, TaskFamily family) {
    const std::string& x = require(ex, "x1", family);
    const std::string& head = require(ex, "head", family);
    const std::string& tail = require(ex, "tail", family);
    const std::size_t hp = find_word(x, head);
    if (hp == std::string::npos) fail(ErrorKind::kSchema, "head entity '" + head + "' not found in x1");
    const std::size_t tp = find_word(x, tail, hp, hp + head.size());
    if (tp == std::string::npos) fail(ErrorKind::kSchema, "tail entity '" + tail + "' not found in x1");
    struct Mark {
        std::size_t pos, len;
        std::string open, close, type;
    };
    std::vector<Mark> marks = {{hp, head.size(), "[E1] ", " [/E1]", ex.head_type.value_or("")},
                               {tp, tail.size(), "[E2] ", " [/E2]", ex.tail_type.value_or("")}};
    std::sort(marks.begin(), marks.end(), [](const Mark& a, const Mark& b) { return a.pos < b.pos; });
    std::string out;
    std::size_t cursor = 0;
    for (const auto& m : marks) {
        out += x.substr(cursor, m.pos - cursor);
        out += m.open + with_type(x.substr(m.pos, m.len), m.type) + m.close;
        cursor = m.pos + m.len;
    }
    out += x.substr(cursor);
    return out;
}

inline std::string input_region(const RawExample& ex, TaskFamily family, const RenderOptions& opts) {
    switch (family) {
        case TaskFamily::kRelationClassification: return mark_entities(ex, family);
        case TaskFamily::kNliOrParaphrase:
        case TaskFamily::kWordInContext: {
            const std::string& x1 = require(ex, "x1", family);
            const std::string& x2 = require(ex, "x2", family);
            return x1 + (opts.pair_separator ? " [SEP] " : " ") + x2;
        }
        default: return require(ex, "x1", family);
    }
}

inline std::map<std::string, std::string> placeholder_values(const RawExample& ex, TaskFamily family) {
    std::map<std::string, std::string> v;
    for (const auto& name : required_fields(family)) {
        if (name == "x1") continue;
        v[name] = require(ex, name, family);
    }
    return v;
}

inline void check_fields(const RawExample& ex, TaskFamily family) {
    for (const auto& name : required_fields(family)) {
        const std::string& value = require(ex, name, family);
        reject_reserved(value, name);
    }
}

}  // namespace detail

// Input side: "<region> <prompt suffix>" with exactly one [MASK] in the suffix.
inline PromptedExample render_input(const RawExample& ex, TaskFamily family, const RenderOptions& opts = {},
                                    const TemplateLibrary& templates = default_templates()) {
    detail::check_fields(ex, family);
    const std::string& fmt = templates.input_format(family);
    PromptedExample out;
    out.family = family;
    out.gold = ex.gold;
    out.input = detail::input_region(ex, family, opts);
    out.suffix = std::string(trim(detail::substitute(fmt.substr(std::string_view("{input}").size()),
                                                      detail::placeholder_values(ex, family))));
    return out;
}

// Non-prompted rendering for the classification-head baseline: the same input
// region, with task keys (target entity, keywords, stance target) appended
// after [SEP] where the family has them. Contains no [MASK].
inline PromptedExample render_plain(const RawExample& ex, TaskFamily family, const RenderOptions& opts = {}) {
    detail::check_fields(ex, family);
    PromptedExample out;
    out.family = family;
    out.gold = ex.gold;
    out.input = detail::input_region(ex, family, opts);
    switch (family) {
        case TaskFamily::kEntityTyping:
        case TaskFamily::kStanceDetection: out.suffix = "[SEP] " + *ex.target; break;
        case TaskFamily::kWordInContext: out.suffix = "[SEP] " + *ex.k1 + " [SEP] " + *ex.k2; break;
        default: break;
    }
    return out;
}

struct RenderedLabel {
    std::string prefix;  // template text before the name
    std::string name;    // label name, augmented when requested
    std::string suffix;  // template text after the name

    std::string text() const { return prefix + name + suffix; }
};

inline RenderedLabel render_label_parts(const std::string& name, LabelTemplate templ,
                                        const std::optional<Augmentation>& augmentation = std::nullopt,
                                        const TemplateLibrary& templates = default_templates()) {
    if (trim(name).empty()) fail(ErrorKind::kSchema, "label name must be non-empty");
    detail::reject_reserved(name, "label");
    const std::string& fmt = templates.label_format(templ);
    const auto at = fmt.find("{label}");
    RenderedLabel out;
    out.prefix = fmt.substr(0, at);
    out.suffix = fmt.substr(at + std::string_view("{label}").size());
    out.name = name;
    if (augmentation) {
        for (const auto& w : *augmentation) {
            if (trim(w).empty()) fail(ErrorKind::kSchema, "augmentation words must be non-empty");
            detail::reject_reserved(w, "augmentation");
            out.name += ", " + w;
        }
    }
    return out;
}

inline std::string render_label(const std::string& name, LabelTemplate templ,
                                 const std::optional<Augmentation>& augmentation = std::nullopt,
                                 const TemplateLibrary& templates = default_templates()) {
    return render_label_parts(name, templ, augmentation, templates).text();
}

struct LabelSequence {
    TokenSequence seq;
    TokenSpan name_span;    // tokens of the (possibly augmented) label name
    TokenSpan prompt_span;  // everything after [CLS]
};

// One encoded label-prompt per label, in canonical label order.
inline std::vector<LabelSequence> render_label_set(const LabelSet& labels, const Vocab& vocab,
                                                   std::size_t max_len = kDefaultMaxInputLength,
                                                   const TemplateLibrary& templates = default_templates()) {
    labels.validate();
    std::vector<LabelSequence> out;
    out.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::optional<Augmentation> aug;
        if (labels.augment) aug = labels.augmentation[i];
        const RenderedLabel parts = render_label_parts(labels.names[i], labels.templ, aug, templates);
        const auto& opts = vocab.options();
        const std::size_t prefix_len = tokenize(parts.prefix, opts).size();
        const std::size_t name_len = tokenize(parts.name, opts).size();
        const std::size_t suffix_len = tokenize(parts.suffix, opts).size();
        LabelSequence ls;
        ls.seq = encode(parts.text(), vocab, max_len);
        if (ls.seq.size() != 1 + prefix_len + name_len + suffix_len) {
            fail(ErrorKind::kContract, "label prompt for '" + labels.names[i] +
                                           "' does not tokenize as prefix + name + suffix (too long?)");
        }
        if (ls.seq.mask_positions.size() != 1) {
            fail(ErrorKind::kContract, "label prompt for '" + labels.names[i] + "' must hold exactly one [MASK]");
        }
        ls.name_span = {1 + prefix_len, 1 + prefix_len + name_len};
        ls.prompt_span = {1, ls.seq.size()};
        out.push_back(std::move(ls));
    }
    return out;
}

// Encodes a rendered input, truncating only its raw-input region.
inline TokenSequence encode(const PromptedExample& ex, const Vocab& vocab,
                            std::size_t max_len = kDefaultMaxInputLength) {
    return encode(ex.input, ex.suffix, vocab, max_len);
}

}  // namespace maskmatch
