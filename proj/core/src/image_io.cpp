#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>

#include "tpnerf/errors.hpp"
#include "tpnerf/scene_data.hpp"
#include "tpnerf/tensor_archive.hpp"

namespace tpnerf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw LoadError("cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw LoadError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto stride = png_get_rowbytes(png, info);
  if (stride != static_cast<png_size_t>(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("unsupported PNG layout: " + path.string());
  }
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  auto bytes = torch::from_blob(pixels.data(), {static_cast<int64_t>(height),
                                                static_cast<int64_t>(width), 3},
                                torch::kUInt8);
  return bytes.to(torch::kFloat32) / 255.0f;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(2) != 3) throw InputError("write_png expects [H, W, 3]");
  const auto bytes = (image.detach().to(torch::kFloat64).clamp(0.0, 1.0) * 255.0)
                         .round()
                         .to(torch::kUInt8)
                         .contiguous();
  const auto height = static_cast<png_uint_32>(image.size(0));
  const auto width = static_cast<png_uint_32>(image.size(1));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw InputError("cannot write image " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw InputError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(height);
  auto* base = const_cast<png_bytep>(bytes.data_ptr<uint8_t>());
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = base + static_cast<std::size_t>(r) * width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InputError("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::string encode_pfm(const torch::Tensor& values) {
  const bool color = values.dim() == 3;
  if (!(values.dim() == 2 || (color && values.size(2) == 3)))
    throw InputError("PFM data must be [H, W] or [H, W, 3]");
  const auto data = values.detach().to(torch::kFloat32).flip({0}).contiguous();
  const int64_t h = values.size(0);
  const int64_t w = values.size(1);
  std::string out = std::string(color ? "PF" : "Pf") + "\n" + std::to_string(w) + " " +
                    std::to_string(h) + "\n-1.0\n";
  const auto nbytes = static_cast<std::size_t>(data.numel()) * sizeof(float);
  out.append(static_cast<const char*>(data.data_ptr()), nbytes);
  return out;
}

torch::Tensor decode_pfm(std::string_view bytes, const std::string& source) {
  // Header: three whitespace-terminated tokens, a single whitespace byte after the last.
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw LoadError(source + ": truncated PFM header");
    return std::string(bytes.substr(start, pos - start));
  };
  const auto kind = token();
  if (kind != "Pf" && kind != "PF") throw LoadError(source + ": not a PFM file");
  int64_t w = 0;
  int64_t h = 0;
  double scale = 0.0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw LoadError(source + ": malformed PFM header");
  }
  if (pos >= bytes.size()) throw LoadError(source + ": truncated PFM header");
  ++pos;
  if (w <= 0 || h <= 0) throw LoadError(source + ": invalid PFM dimensions");
  if (scale >= 0.0) throw LoadError(source + ": big-endian PFM is not supported");
  const int64_t channels = kind == "PF" ? 3 : 1;
  const auto nbytes = static_cast<std::size_t>(w * h * channels) * sizeof(float);
  if (bytes.size() - pos != nbytes) throw LoadError(source + ": PFM payload size mismatch");
  auto data = torch::empty({h, w, channels}, torch::kFloat32);
  std::memcpy(data.data_ptr(), bytes.data() + pos, nbytes);
  data = data.flip({0}).contiguous();
  return channels == 1 ? data.squeeze(-1) : data;
}

void write_pfm(const std::filesystem::path& path, const torch::Tensor& values) {
  write_file(path, encode_pfm(values));
}

torch::Tensor read_pfm(const std::filesystem::path& path) {
  return decode_pfm(read_file(path), path.string());
}

}  // namespace tpnerf
