#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "smg/params.hpp"

namespace smg::backbone {

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  ParamStore params;
  Metadata meta;
};

/**
 * SMG1 container, all integers little-endian:
 *
 *   "SMG1" | u32 metadata length | metadata (UTF-8 "key=value\n" lines)
 *   | u32 tensor count
 *   then per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 values
 */
std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params, const Metadata& meta);

/// Parses a whole container; nothing is returned unless every byte is valid.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParamStore& params, const Metadata& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Typed metadata lookups; missing or malformed entries raise FormatError.
const std::string& meta_get(const Metadata& meta, const std::string& key);
int meta_int(const Metadata& meta, const std::string& key);
double meta_double(const Metadata& meta, const std::string& key);

/// Shortest round-trip text form of a double.
std::string format_double(double v);

}  // namespace smg::backbone
