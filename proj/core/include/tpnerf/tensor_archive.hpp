#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace tpnerf {

/// Named tensors plus a free-form JSON metadata document.
///
/// Layout: "TPNA" magic, uint32 format version, uint64 header length, JSON
/// header, then the tensor blobs back to back (little-endian). Floating point
/// tensors are stored as float32, integer tensors as int64.
struct TensorArchive {
  std::string metadata = "{}";  ///< serialized JSON object
  std::map<std::string, torch::Tensor> tensors;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string serialize_archive(const TensorArchive& archive);
/// `source` names the archive in error messages.
TensorArchive parse_archive(std::string_view bytes, const std::string& source = "archive");

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

/// Whole-file helpers shared by the on-disk formats.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tpnerf
