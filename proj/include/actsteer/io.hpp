#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "actsteer/common.hpp"

namespace actsteer {

using json = nlohmann::json;

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// FNV-1a, 64-bit. Stable fingerprint for referencing files from other files.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

json read_json(const std::string& path);
/// Serializes with 2-space indent, sorted keys, trailing newline — the byte
/// layout every writer in this project uses, so identical documents are
/// identical files.
void write_json(const std::string& path, const json& j);
std::string json_bytes(const json& j);

/// Field accessors that name the offending field on failure.
const json& require_field(const json& j, const std::string& key, const std::string& where);
double require_double(const json& j, const std::string& key, const std::string& where);
std::int64_t require_int(const json& j, const std::string& key, const std::string& where);
std::string require_string(const json& j, const std::string& key, const std::string& where);
std::vector<double> require_doubles(const json& j, const std::string& key, const std::string& where);

}  // namespace actsteer
