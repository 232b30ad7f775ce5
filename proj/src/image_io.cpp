#include "ynet/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "ynet/errors.hpp"

namespace ynet {
namespace {

struct ReadCursor {
  const std::vector<uint8_t>* bytes;
  size_t pos;
};

void read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->bytes->size() - cur->pos < n) png_error(png, "truncated PNG data");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

[[noreturn]] void error_cb(png_structp, png_const_charp msg) { throw FormatError(std::string("PNG: ") + msg); }
void warning_cb(png_structp, png_const_charp) {}

}  // namespace

Image8 decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  Image8 img;
  try {
    png_set_read_fn(png, &cur, read_cb);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) throw FormatError("unsupported PNG channel layout");
    const size_t stride = static_cast<size_t>(img.width) * static_cast<size_t>(img.channels);
    img.pixels.resize(stride * static_cast<size_t>(img.height));
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<size_t>(y)] = img.pixels.data() + stride * static_cast<size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image8 read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<uint8_t> encode_png(const Image8& img) {
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3) ||
      img.pixels.size() != static_cast<size_t>(img.width * img.height * img.channels)) {
    throw FormatError("encode_png: inconsistent image buffer");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> out;
  try {
    png_set_write_fn(png, &out, write_cb, flush_cb);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const size_t stride = static_cast<size_t>(img.width) * static_cast<size_t>(img.channels);
    for (int y = 0; y < img.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(img.pixels.data() + stride * static_cast<size_t>(y)));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ynet
