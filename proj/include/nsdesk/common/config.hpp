#pragma once

// Ordered `key = value` settings with '#' comments. Readers take the keys
// they understand; anything left over is an unknown key.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nsdesk::config {

class KeyValues {
public:
    // Errors (missing '=', empty key, duplicate key) name `source` and line.
    static KeyValues parse(std::string_view text, std::string_view source = "<config>");
    static KeyValues load(const std::filesystem::path& path);

    void set(std::string key, std::string value);
    bool has(std::string_view key) const;
    std::optional<std::string> get(std::string_view key) const;
    // Returns and removes the value of `key`.
    std::optional<std::string> take(std::string_view key);
    // Copies every entry of `other` over this one, later wins.
    void merge(const KeyValues& other);

    bool empty() const { return entries_.empty(); }
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::string to_text() const;

    // Throws ConfigError listing the remaining keys, if any.
    void expect_empty(std::string_view context) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Typed readers used by the consumers of a KeyValues. Each throws ParseError
// naming the key on malformed input.
double as_double(std::string_view key, std::string_view value);
std::size_t as_size(std::string_view key, std::string_view value);
std::uint64_t as_u64(std::string_view key, std::string_view value);
bool as_bool(std::string_view key, std::string_view value);
std::vector<std::size_t> as_size_list(std::string_view key, std::string_view value);
std::vector<double> as_double_list(std::string_view key, std::string_view value);
std::vector<std::string> as_string_list(std::string_view value);

}  // namespace nsdesk::config
