#pragma once

// Parameter archive.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "WFCKPT01"
//   bytes 8..15  u64 manifest length M
//   next M bytes manifest, compact JSON:
//                {"metadata": {...}, "tensors": [{"name", "kind", "dtype",
//                 "shape", "offset", "nbytes"}, ...]}
//   remainder    raw payloads, concatenated in manifest order; `offset` is
//                relative to the start of the payload section
//
// dtype is one of "f32", "f64", "i64". Encoding is a pure function of the
// archive contents, so decode followed by encode reproduces the same bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "windformer/module.hpp"

namespace windformer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { f32, f64, i64 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

struct ArchiveEntry {
  std::string name;
  std::string kind;  // "parameter" or "buffer"
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian element bytes
};

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(std::string_view name) const;
  /// Names in manifest order.
  std::vector<std::string> names() const;
};

std::vector<std::uint8_t> encode_archive(const Archive& archive);
Archive decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Snapshot of every parameter and batch-norm statistic of `module`.
template <typename T>
Archive capture_module(const Module<T>& module, nlohmann::json metadata = nlohmann::json::object());

/// Loads values into `module`. The archive must hold exactly the module's
/// parameters and statistics with matching shapes; values are converted if
/// the archive was written at a different precision.
template <typename T>
void restore_module(Module<T>& module, const Archive& archive);

}  // namespace windformer
