#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

namespace dbt {

/// Copies j[key] into dst when present; missing keys keep the default.
template <typename T>
void read_field(const nlohmann::json& j, std::string_view key, T& dst) {
    if (const auto it = j.find(key); it != j.end()) it->get_to(dst);
}

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view context);

nlohmann::json load_json(const std::filesystem::path& path);

/// Writes `j.dump(2)` plus a trailing newline.
void save_json(const std::filesystem::path& path, const nlohmann::json& j);

/// 64-bit FNV-1a over a byte string, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace dbt
