#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#ifdef UOT_HAVE_PNG
#include <png.h>
#endif

#include "uot/types.hpp"

namespace uot {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open image file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

// IDX image container (MNIST): magic 0x00000803, then count, rows, cols as
// big-endian u32, then count*rows*cols unsigned bytes.
inline GrayImage decode_idx(const std::vector<std::uint8_t>& bytes, std::size_t index) {
  if (bytes.size() < 16 || detail::be32(bytes, 0) != 0x00000803u) throw InvalidInput("not an IDX image file");
  const std::size_t count = detail::be32(bytes, 4);
  const std::size_t rows = detail::be32(bytes, 8);
  const std::size_t cols = detail::be32(bytes, 12);
  if (index >= count) throw InvalidInput("IDX image index out of range");
  const std::size_t size = rows * cols;
  if (bytes.size() < 16 + count * size) throw InvalidInput("truncated IDX file");
  GrayImage img{cols, rows, {}};
  const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(16 + index * size);
  img.pixels.assign(first, first + static_cast<std::ptrdiff_t>(size));
  return img;
}

// Binary (P5) or ASCII (P2) PGM with maxval <= 255.
inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_ws();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw InvalidInput("malformed PGM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) throw InvalidInput("not a PGM file");
  const bool binary = bytes[1] == '5';
  pos = 2;
  GrayImage img;
  img.width = read_uint();
  img.height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval == 0 || maxval > 255) throw InvalidInput("only 8-bit PGM is supported");
  const std::size_t size = img.width * img.height;
  img.pixels.resize(size);
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + size) throw InvalidInput("truncated PGM file");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), size, img.pixels.begin());
  } else {
    for (std::size_t k = 0; k < size; ++k) img.pixels[k] = static_cast<std::uint8_t>(read_uint());
  }
  return img;
}

#ifdef UOT_HAVE_PNG
inline GrayImage decode_png_file(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw InvalidInput("cannot read PNG: " + path);
  image.format = PNG_FORMAT_GRAY;
  GrayImage img{image.width, image.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw InvalidInput("cannot decode PNG: " + path);
  }
  return img;
}
#endif

// Dispatches on the file's magic bytes. index selects an image inside an
// IDX container and is ignored otherwise.
inline GrayImage load_gray_image(const std::string& path, std::size_t index = 0) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() >= 4 && detail::be32(bytes, 0) == 0x00000803u) return decode_idx(bytes, index);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) return decode_pgm(bytes);
  static constexpr std::array<std::uint8_t, 8> kPngMagic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin())) {
#ifdef UOT_HAVE_PNG
    return decode_png_file(path);
#else
    throw InvalidInput("PNG support not compiled in: " + path);
#endif
  }
  throw InvalidInput("unrecognized image format: " + path);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace uot
