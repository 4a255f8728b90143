#include "regcd/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "regcd/error.hpp"

namespace regcd {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) {
  std::uint8_t raw[4];
  std::memcpy(raw, &v, 4);
  b.insert(b.end(), raw, raw + 4);
}

void put_f32(std::vector<std::uint8_t>& b, double v) {
  const float f = static_cast<float>(v);
  std::uint8_t raw[4];
  std::memcpy(raw, &f, 4);
  b.insert(b.end(), raw, raw + 4);
}

std::int32_t get_i32(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::int32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

float get_f32(const std::vector<std::uint8_t>& b, std::size_t off) {
  float v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

void check_magic(const std::vector<std::uint8_t>& b, const char* magic, std::size_t header,
                 const std::filesystem::path& path) {
  if (b.size() < header)
    throw CorruptFileError("'" + path.string() + "' is truncated: expected at least " + std::to_string(header) +
                               " header bytes, got " + std::to_string(b.size()),
                           b.size());
  if (std::memcmp(b.data(), magic, 4) != 0)
    throw CorruptFileError("'" + path.string() + "' does not start with magic '" + magic + "'", 0);
}

void check_dims(const std::vector<std::uint8_t>& b, std::size_t off, std::int32_t v, const char* name,
                const std::filesystem::path& path) {
  if (v < 1 || v > (1 << 20))
    throw CorruptFileError("'" + path.string() + "' has invalid " + name + " " + std::to_string(v), off);
  (void)b;
}

void check_size(const std::vector<std::uint8_t>& b, std::size_t expected, const std::filesystem::path& path) {
  if (b.size() != expected)
    throw CorruptFileError("'" + path.string() + "' has size " + std::to_string(b.size()) + ", expected " +
                               std::to_string(expected),
                           std::min(b.size(), expected));
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptFileError("cannot decode PNG '" + path.string() + "': " + err, 0);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const int out_c = channels >= 3 ? 3 : 1;
  Tensor img({out_c, static_cast<int>(h), static_cast<int>(w)});
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < out_c; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = rows[y][x * channels + c] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ValidationError("write_png expects {1|3, H, W}, got " + shape_str(image.shape()));
  const int c_n = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> pixels(static_cast<std::size_t>(h) * w * c_n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < c_n; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        pixels[(static_cast<std::size_t>(y) * w + x) * c_n + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  auto tmp = path;
  tmp += ".tmp";
  {
    FilePtr f = open_file(tmp, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("cannot encode PNG '" + path.string() + "': " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, c_n == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * w * c_n);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

Tensor read_mask_png(const std::filesystem::path& path) {
  Tensor img = read_png(path);
  if (img.dim(0) != 1) throw CorruptFileError("mask '" + path.string() + "' is not single-channel", 0);
  for (double& v : img.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return img;
}

void write_mask_png(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ValidationError("mask must be {1, H, W}");
  Tensor m = mask;
  for (double& v : m.values()) v = v != 0.0 ? 1.0 : 0.0;
  write_png(path, m);
}

void write_flow_file(const std::filesystem::path& path, const Tensor& uv) {
  if (uv.rank() != 3 || uv.dim(0) != 2) throw ValidationError("flow must be {2, H, W}, got " + shape_str(uv.shape()));
  const int h = uv.dim(1), w = uv.dim(2);
  std::vector<std::uint8_t> b;
  b.reserve(12 + 8 * static_cast<std::size_t>(h) * w);
  b.insert(b.end(), {'P', 'I', 'E', 'H'});
  put_i32(b, w);
  put_i32(b, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      put_f32(b, uv.at(0, y, x));
      put_f32(b, uv.at(1, y, x));
    }
  write_bytes(path, b);
}

Tensor read_flow_file(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  check_magic(b, "PIEH", 12, path);
  const std::int32_t w = get_i32(b, 4), h = get_i32(b, 8);
  check_dims(b, 4, w, "width", path);
  check_dims(b, 8, h, "height", path);
  check_size(b, 12 + 8 * static_cast<std::size_t>(w) * h, path);
  Tensor uv({2, h, w});
  std::size_t off = 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, off += 8) {
      uv.at(0, y, x) = get_f32(b, off);
      uv.at(1, y, x) = get_f32(b, off + 4);
    }
  return uv;
}

void write_feature_file(const std::filesystem::path& path, const Tensor& field) {
  if (field.rank() != 3) throw ValidationError("feature field must be {C, H, W}");
  const int c_n = field.dim(0), h = field.dim(1), w = field.dim(2);
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'P', 'I', 'E', 'F'});
  put_i32(b, w);
  put_i32(b, h);
  put_i32(b, c_n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < c_n; ++c) put_f32(b, field.at(c, y, x));
  write_bytes(path, b);
}

Tensor read_feature_file(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  check_magic(b, "PIEF", 16, path);
  const std::int32_t w = get_i32(b, 4), h = get_i32(b, 8), c_n = get_i32(b, 12);
  check_dims(b, 4, w, "width", path);
  check_dims(b, 8, h, "height", path);
  check_dims(b, 12, c_n, "channel count", path);
  check_size(b, 16 + 4 * static_cast<std::size_t>(w) * h * c_n, path);
  Tensor field({c_n, h, w});
  std::size_t off = 16;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < c_n; ++c, off += 4) field.at(c, y, x) = get_f32(b, off);
  return field;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace regcd
