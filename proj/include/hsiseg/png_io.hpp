#pragma once

// Indexed PNG I/O for label rasters. Palette indices are read as class ids,
// never expanded to RGB.

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "hsiseg/core.hpp"

namespace hsiseg::png {

using Rgb = std::array<std::uint8_t, 3>;

struct IndexedImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> indices;  // row-major
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// The setjmp frames below hold only trivially destructible locals so the
// longjmp on a libpng error cannot skip a destructor or clobber live state.

struct ReadHeader {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int color = 0;
  int depth = 0;
};

inline bool read_header(png_structp png_ptr, png_infop info, std::FILE* file, ReadHeader* out) {
  if (setjmp(png_jmpbuf(png_ptr))) return false;
  png_init_io(png_ptr, file);
  png_set_sig_bytes(png_ptr, 8);
  png_read_info(png_ptr, info);
  out->color = png_get_color_type(png_ptr, info);
  out->depth = png_get_bit_depth(png_ptr, info);
  if (out->depth < 8) png_set_packing(png_ptr);
  png_read_update_info(png_ptr, info);
  out->width = png_get_image_width(png_ptr, info);
  out->height = png_get_image_height(png_ptr, info);
  return true;
}

inline bool read_rows(png_structp png_ptr, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png_ptr))) return false;
  png_read_image(png_ptr, rows);
  png_read_end(png_ptr, nullptr);
  return true;
}

inline bool write_all(png_structp png_ptr, png_infop info, std::FILE* file, png_uint_32 width, png_uint_32 height,
                      png_colorp colors, int n_colors, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png_ptr))) return false;
  png_init_io(png_ptr, file);
  png_set_IHDR(png_ptr, info, width, height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png_ptr, info, colors, n_colors);
  png_write_info(png_ptr, info);
  png_write_image(png_ptr, rows);
  png_write_end(png_ptr, nullptr);
  return true;
}

}  // namespace detail

/// Reads an 8-bit (or packed 1/2/4-bit) palette or grayscale PNG and returns
/// the raw sample values.
inline IndexedImage read_indexed(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error(path.string() + ": not a PNG file");

  png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png_ptr) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png_ptr);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png_ptr, &info};

  detail::ReadHeader h;
  if (!info || !detail::read_header(png_ptr, info, file.get(), &h)) throw Error(path.string() + ": corrupt PNG");
  if ((h.color != PNG_COLOR_TYPE_PALETTE && h.color != PNG_COLOR_TYPE_GRAY) || h.depth > 8)
    throw Error(path.string() + ": label PNG must be palette or 8-bit grayscale");
  IndexedImage img;
  img.width = h.width;
  img.height = h.height;
  img.indices.resize(img.width * img.height);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.indices.data() + y * img.width;
  if (!detail::read_rows(png_ptr, rows.data())) throw Error(path.string() + ": corrupt PNG");
  return img;
}

/// Writes an 8-bit palette PNG. Every index must have a palette entry.
inline void write_indexed(const std::filesystem::path& path, const IndexedImage& img,
                          const std::vector<Rgb>& palette) {
  if (palette.empty() || palette.size() > 256) throw Error("write_indexed: palette needs 1..256 colours");
  if (img.indices.size() != img.width * img.height) throw Error("write_indexed: size mismatch");
  for (auto i : img.indices)
    if (i >= palette.size()) throw Error("write_indexed: index without palette entry");

  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot write " + path.string());
  png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png_ptr) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png_ptr);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png_ptr, &info};

  std::vector<png_color> colors(palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i) colors[i] = {palette[i][0], palette[i][1], palette[i][2]};
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = const_cast<png_bytep>(img.indices.data() + y * img.width);
  if (!info || !detail::write_all(png_ptr, info, file.get(), static_cast<png_uint_32>(img.width),
                                  static_cast<png_uint_32>(img.height), colors.data(),
                                  static_cast<int>(colors.size()), rows.data()))
    throw Error(path.string() + ": PNG encoding failed");
}

}  // namespace hsiseg::png
