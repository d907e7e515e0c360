#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maskmatch/error.hpp"

namespace maskmatch {

// Reserved ids occupy the low end of every vocabulary.
enum SpecialToken : int {
    kPad = 0,
    kUnk = 1,
    kCls = 2,
    kSep = 3,
    kMask = 4,
    kHeadStart = 5,
    kHeadEnd = 6,
    kTailStart = 7,
    kTailEnd = 8,
};

inline constexpr std::array<std::string_view, 9> kReservedTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[E1]", "[/E1]", "[E2]", "[/E2]",
};

struct TokenizerOptions {
    bool lowercase = true;
    bool split_punctuation = true;
};

namespace detail {

inline bool is_punct(char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
}

inline bool is_space(char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::isspace(u);
}

inline std::size_t match_reserved(std::string_view text, std::size_t pos) {
    if (text[pos] != '[') return 0;
    for (auto tok : kReservedTokens)
        if (text.substr(pos, tok.size()) == tok) return tok.size();
    return 0;
}

}  // namespace detail

// Splits text into word tokens. Reserved bracket tokens are recognized
// verbatim (case-sensitive) and never lowercased.
inline std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& opts = {}) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (detail::is_space(text[i])) {
            ++i;
            continue;
        }
        if (std::size_t n = detail::match_reserved(text, i)) {
            out.emplace_back(text.substr(i, n));
            i += n;
            continue;
        }
        if (opts.split_punctuation && detail::is_punct(text[i])) {
            out.emplace_back(1, text[i]);
            ++i;
            continue;
        }
        std::string word;
        while (i < text.size() && !detail::is_space(text[i]) &&
               !(opts.split_punctuation && detail::is_punct(text[i])) && !detail::match_reserved(text, i)) {
            char c = text[i++];
            if (opts.lowercase && static_cast<unsigned char>(c) < 0x80) {
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
            word.push_back(c);
        }
        out.push_back(std::move(word));
    }
    return out;
}

class Vocab {
   public:
    Vocab() {
        for (auto tok : kReservedTokens) append(std::string(tok));
    }

    // Keeps every token seen at least min_count times, most frequent first
    // (ties broken lexicographically).
    static Vocab build(std::span<const std::string> corpus, std::size_t min_count,
                       const TokenizerOptions& opts = {}) {
        if (corpus.empty()) fail(ErrorKind::kData, "cannot build a vocabulary from an empty corpus");
        std::map<std::string, std::size_t> counts;
        for (const auto& text : corpus)
            for (auto& tok : tokenize(text, opts)) ++counts[tok];
        std::vector<std::pair<std::string, std::size_t>> kept;
        for (auto& [tok, n] : counts)
            if (n >= min_count && !is_reserved(tok)) kept.emplace_back(tok, n);
        std::stable_sort(kept.begin(), kept.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocab v;
        v.options_ = opts;
        for (auto& [tok, n] : kept) v.append(tok);
        return v;
    }

    static bool is_reserved(std::string_view tok) {
        return std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end();
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const TokenizerOptions& options() const noexcept { return options_; }
    void set_options(const TokenizerOptions& opts) { options_ = opts; }

    bool contains(std::string_view tok) const { return ids_.contains(std::string(tok)); }

    int id(std::string_view tok) const {
        auto it = ids_.find(std::string(tok));
        return it == ids_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            fail(ErrorKind::kIndex, "token id " + std::to_string(id) + " outside vocabulary");
        }
        return tokens_[id];
    }

    // One "<token>\t<id>\n" line per entry, reserved tokens first.
    void save(std::ostream& os) const {
        for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << i << '\n';
    }

    static Vocab load(std::istream& is, const TokenizerOptions& opts = {}) {
        Vocab v;
        v.tokens_.clear();
        v.ids_.clear();
        v.options_ = opts;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                fail(ErrorKind::kData, "vocab line " + std::to_string(lineno) + ": missing tab");
            }
            const std::string tok = line.substr(0, tab);
            std::size_t id = 0;
            try {
                id = std::stoul(line.substr(tab + 1));
            } catch (const std::exception&) {
                fail(ErrorKind::kData, "vocab line " + std::to_string(lineno) + ": bad id");
            }
            if (id != v.tokens_.size()) {
                fail(ErrorKind::kData, "vocab line " + std::to_string(lineno) + ": ids must be contiguous");
            }
            if (id < kReservedTokens.size() && tok != kReservedTokens[id]) {
                fail(ErrorKind::kData, "vocab line " + std::to_string(lineno) + ": reserved id " +
                                           std::to_string(id) + " must be " + std::string(kReservedTokens[id]));
            }
            if (v.ids_.contains(tok)) {
                fail(ErrorKind::kData, "vocab line " + std::to_string(lineno) + ": duplicate token " + tok);
            }
            v.append(tok);
        }
        if (v.tokens_.size() < kReservedTokens.size()) {
            fail(ErrorKind::kData, "vocab is missing reserved tokens");
        }
        return v;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) fail(ErrorKind::kData, "cannot write " + path);
        save(os);
    }

    static Vocab load_file(const std::string& path, const TokenizerOptions& opts = {}) {
        std::ifstream is(path, std::ios::binary);
        if (!is) fail(ErrorKind::kData, "cannot read " + path);
        return load(is, opts);
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

   private:
    void append(std::string tok) {
        ids_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(std::move(tok));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    TokenizerOptions options_;
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::size_t> mask_positions;

    std::size_t size() const noexcept { return ids.size(); }
};

inline constexpr std::size_t kDefaultMaxInputLength = 500;

namespace detail {

inline void append_ids(TokenSequence& seq, std::span<const std::string> toks, const Vocab& vocab) {
    for (const auto& t : toks) {
        const int id = vocab.id(t);
        if (id == kMask) seq.mask_positions.push_back(seq.ids.size());
        seq.ids.push_back(id);
    }
}

}  // namespace detail

// [CLS] + body + suffix. When too long, the body is cut from its right end so
// that the suffix (the prompt) always survives intact.
inline TokenSequence encode(std::string_view body, std::string_view suffix, const Vocab& vocab,
                            std::size_t max_len = kDefaultMaxInputLength) {
    if (max_len == 0) fail(ErrorKind::kConfig, "max_len must be positive");
    auto body_toks = tokenize(body, vocab.options());
    auto suffix_toks = tokenize(suffix, vocab.options());
    const std::size_t room = max_len - 1;
    if (suffix_toks.size() > room) {
        suffix_toks.erase(suffix_toks.begin(), suffix_toks.end() - static_cast<std::ptrdiff_t>(room));
    }
    const std::size_t body_room = room - suffix_toks.size();
    if (body_toks.size() > body_room) body_toks.resize(body_room);

    TokenSequence seq;
    seq.ids.reserve(1 + body_toks.size() + suffix_toks.size());
    seq.ids.push_back(kCls);
    detail::append_ids(seq, body_toks, vocab);
    detail::append_ids(seq, suffix_toks, vocab);
    return seq;
}

inline TokenSequence encode(std::string_view text, const Vocab& vocab,
                            std::size_t max_len = kDefaultMaxInputLength) {
    return encode(text, std::string_view{}, vocab, max_len);
}

// Space-joined tokens, without the leading [CLS].
inline std::string decode(const TokenSequence& seq, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (i == 0 && seq.ids[i] == kCls) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(seq.ids[i]);
    }
    return out;
}

}  // namespace maskmatch
