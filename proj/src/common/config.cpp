#include "nsdesk/common/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"

namespace nsdesk::config {

namespace {

std::string where(std::string_view key) { return "config key '" + std::string(key) + "'"; }

}  // namespace

KeyValues KeyValues::parse(std::string_view text, std::string_view source) {
    KeyValues kv;
    std::size_t lineno = 0;
    for (const std::string& raw : text::split(text, '\n')) {
        ++lineno;
        std::string_view line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = text::trim(line);
        if (line.empty()) continue;
        const std::string loc = std::string(source) + ":" + std::to_string(lineno) + ": ";
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(loc + "expected 'key = value'");
        const std::string key(text::trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError(loc + "empty key");
        if (kv.has(key)) throw ParseError(loc + "duplicate key '" + key + "'");
        kv.entries_.emplace_back(key, std::string(text::trim(line.substr(eq + 1))));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void KeyValues::set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    entries_.emplace_back(std::move(key), std::move(value));
}

bool KeyValues::has(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> KeyValues::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    return std::nullopt;
}

std::optional<std::string> KeyValues::take(std::string_view key) {
    const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
    if (it == entries_.end()) return std::nullopt;
    std::string v = std::move(it->second);
    entries_.erase(it);
    return v;
}

void KeyValues::merge(const KeyValues& other) {
    for (const auto& [k, v] : other.entries_) set(k, v);
}

std::string KeyValues::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

void KeyValues::expect_empty(std::string_view context) const {
    if (entries_.empty()) return;
    std::vector<std::string> keys;
    for (const auto& e : entries_) keys.push_back(e.first);
    throw ConfigError(std::string(context) + ": unknown key(s) " + text::join(keys, ", "));
}

double as_double(std::string_view key, std::string_view value) { return text::parse_double(value, where(key)); }

std::uint64_t as_u64(std::string_view key, std::string_view value) {
    const std::string_view s = text::trim(value);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("invalid unsigned integer for " + where(key) + ": '" + std::string(s) + "'");
    }
    return v;
}

std::size_t as_size(std::string_view key, std::string_view value) {
    return static_cast<std::size_t>(as_u64(key, value));
}

bool as_bool(std::string_view key, std::string_view value) {
    const std::string_view s = text::trim(value);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ParseError("invalid boolean for " + where(key) + ": '" + std::string(s) + "'");
}

std::vector<std::string> as_string_list(std::string_view value) {
    std::vector<std::string> out;
    if (text::trim(value).empty()) return out;
    for (const std::string& part : text::split(value, ',')) out.emplace_back(text::trim(part));
    return out;
}

std::vector<std::size_t> as_size_list(std::string_view key, std::string_view value) {
    std::vector<std::size_t> out;
    for (const std::string& s : as_string_list(value)) out.push_back(as_size(key, s));
    return out;
}

std::vector<double> as_double_list(std::string_view key, std::string_view value) {
    std::vector<double> out;
    for (const std::string& s : as_string_list(value)) out.push_back(as_double(key, s));
    return out;
}

}  // namespace nsdesk::config
