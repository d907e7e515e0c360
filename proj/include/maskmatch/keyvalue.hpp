#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskmatch/error.hpp"

namespace maskmatch {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// Ordered key=value document. Blank lines and lines starting with '#' are
// ignored; the key is everything before the first '='.
class KeyValues {
   public:
    static KeyValues parse(std::istream& is, const std::string& origin, ErrorKind kind = ErrorKind::kConfig) {
        KeyValues kv;
        kv.origin_ = origin;
        kv.kind_ = kind;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos) {
                fail(kind, origin + ":" + std::to_string(lineno) + ": expected key=value");
            }
            kv.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
        }
        return kv;
    }

    static KeyValues parse_text(const std::string& text, const std::string& origin,
                                ErrorKind kind = ErrorKind::kConfig) {
        std::istringstream is(text);
        return parse(is, origin, kind);
    }

    static KeyValues load_file(const std::string& path, ErrorKind kind = ErrorKind::kConfig) {
        std::ifstream is(path);
        if (!is) fail(kind, "cannot open " + path);
        return parse(is, path, kind);
    }

    void set(std::string key, std::string value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = std::move(value);
                return;
            }
        entries_.emplace_back(std::move(key), std::move(value));
    }

    bool has(std::string_view key) const { return find(key) != nullptr; }

    const std::string* find(std::string_view key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return &v;
        return nullptr;
    }

    std::string get(std::string_view key) const {
        if (const auto* v = find(key)) return *v;
        fail(kind_, origin_ + ": missing key '" + std::string(key) + "'");
    }

    std::string get_or(std::string_view key, std::string fallback) const {
        const auto* v = find(key);
        return v ? *v : fallback;
    }

    template <typename Number>
    Number number(std::string_view key, Number fallback) const {
        const auto* v = find(key);
        return v ? to_number<Number>(key, *v) : fallback;
    }

    template <typename Number>
    Number number(std::string_view key) const {
        return to_number<Number>(key, get(key));
    }

    bool flag(std::string_view key, bool fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
        if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
        fail(kind_, origin_ + ": key '" + std::string(key) + "' expects a boolean, got '" + *v + "'");
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    void write(std::ostream& os) const {
        for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
    }

    std::string str() const {
        std::ostringstream os;
        write(os);
        return os.str();
    }

   private:
    template <typename Number>
    Number to_number(std::string_view key, const std::string& text) const {
        Number out{};
        const char* first = text.data();
        const char* last = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(first, last, out);
        if (ec != std::errc{} || ptr != last) {
            fail(kind_, origin_ + ": key '" + std::string(key) + "' expects a number, got '" + text + "'");
        }
        return out;
    }

    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_ = "<config>";
    ErrorKind kind_ = ErrorKind::kConfig;
};

}  // namespace maskmatch
