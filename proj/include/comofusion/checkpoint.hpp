#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "comofusion/tensor.hpp"

namespace comofusion {

/// Binary tensor archive with a JSON metadata header.
///
/// Layout (all integers little-endian):
///
///   bytes 0..7    magic "CMFARCH1"
///   bytes 8..15   uint64 header length L
///   next L bytes  UTF-8 JSON header
///   remainder     float64 payload
///
/// The header is the caller's metadata object plus a "tensors" array of
/// {name, shape: [n, c, h, w], offset, count}, where offset and count are in
/// elements from the start of the payload.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

inline constexpr int kArchiveFormatVersion = 1;

void write_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws IoError on missing files, bad magic or truncated payloads.
Archive read_archive(const std::filesystem::path& path);

}  // namespace comofusion
