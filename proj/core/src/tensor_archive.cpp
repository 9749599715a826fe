#include "tpnerf/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'N', 'A'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

torch::Tensor storage_form(const torch::Tensor& t) {
  auto cpu = t.detach().to(torch::kCPU);
  if (cpu.is_floating_point()) return cpu.to(torch::kFloat32).contiguous();
  return cpu.to(torch::kInt64).contiguous();
}

}  // namespace

std::string serialize_archive(const TensorArchive& archive) {
  nlohmann::json header;
  try {
    header["metadata"] = nlohmann::json::parse(archive.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("archive metadata is not valid JSON: ") + e.what());
  }
  std::string blobs;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, tensor] : archive.tensors) {
    const auto t = storage_form(tensor);
    const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name},
                       {"dtype", t.scalar_type() == torch::kFloat32 ? "float32" : "int64"},
                       {"shape", t.sizes().vec()},
                       {"offset", blobs.size()},
                       {"nbytes", nbytes}});
    blobs.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  header["tensors"] = entries;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += blobs;
  return out;
}

TensorArchive parse_archive(std::string_view bytes, const std::string& source) {
  constexpr std::size_t prefix = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw LoadError(source + ": not a tensor archive");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kArchiveVersion)
    throw LoadError(source + ": unsupported archive version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - prefix) throw LoadError(source + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(prefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(source + ": corrupt header: " + e.what());
  }
  const auto blobs = bytes.substr(prefix + header_len);

  TensorArchive out;
  out.metadata = header.value("metadata", nlohmann::json::object()).dump();
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      torch::Dtype type;
      if (dtype == "float32") {
        type = torch::kFloat32;
      } else if (dtype == "int64") {
        type = torch::kInt64;
      } else {
        throw LoadError(source + ": tensor '" + name + "' has unknown dtype " + dtype);
      }
      int64_t numel = 1;
      for (int64_t d : shape) {
        if (d < 0) throw LoadError(source + ": tensor '" + name + "' has a negative dimension");
        numel *= d;
      }
      if (static_cast<std::size_t>(numel) * 4 * (type == torch::kInt64 ? 2 : 1) != nbytes)
        throw LoadError(source + ": tensor '" + name + "' size does not match its shape");
      if (offset > blobs.size() || nbytes > blobs.size() - offset)
        throw LoadError(source + ": truncated blob for tensor '" + name + "'");
      auto t = torch::empty(shape, torch::TensorOptions().dtype(type));
      std::memcpy(t.data_ptr(), blobs.data() + offset, nbytes);
      out.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(source + ": malformed tensor table: " + e.what());
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  write_file(path, serialize_archive(archive));
}

TensorArchive load_archive(const std::filesystem::path& path) {
  return parse_archive(read_file(path), path.string());
}

}  // namespace tpnerf
