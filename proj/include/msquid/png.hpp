#pragma once

// Deterministic PNG writer: 8-bit RGB, non-interlaced, filter type 0 on
// every scanline, one IDAT produced by zlib compress2() at level 9. Output
// bytes depend only on the pixels (and the linked zlib).

#include <zlib.h>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "byte_classes.hpp"
#include "bytes.hpp"
#include "render.hpp"

namespace msquid::png {

namespace detail {

inline void put_chunk(Bytes& out, const char type[4], const Bytes& body) {
  msquid::detail::store_be32(out, static_cast<std::uint32_t>(body.size()));
  const std::size_t crc_from = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  const uLong crc = crc32(0L, out.data() + crc_from, static_cast<uInt>(out.size() - crc_from));
  msquid::detail::store_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Encode a row-major RGB buffer (3 bytes per pixel).
inline Bytes encode_rgb(std::uint32_t width, std::uint32_t height, ByteView rgb) {
  if (width == 0 || height == 0 || rgb.size() != std::size_t{width} * height * 3) {
    throw std::invalid_argument("png: pixel buffer does not match dimensions");
  }
  Bytes raw;
  const std::size_t stride = std::size_t{width} * 3;
  raw.reserve((stride + 1) * height);
  for (std::uint32_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: None
    raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(y * stride),
               rgb.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  Bytes z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: deflate failed");
  }
  z.resize(zlen);

  Bytes out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  Bytes ihdr;
  msquid::detail::store_be32(ihdr, width);
  msquid::detail::store_be32(ihdr, height);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, truecolour, deflate, filter 0, no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", z);
  detail::put_chunk(out, "IEND", {});
  return out;
}

/// Each cell becomes a scale x scale block of its class colour.
inline Bytes emit_png(const VisImage& img, std::uint32_t scale = 1) {
  if (scale == 0) throw std::invalid_argument("png: scale must be >= 1");
  const std::uint32_t side = img.side();
  const std::uint32_t dim = side * scale;
  Bytes rgb;
  rgb.reserve(std::size_t{dim} * dim * 3);
  for (std::uint32_t py = 0; py < dim; ++py) {
    for (std::uint32_t px = 0; px < dim; ++px) {
      const Rgb c = class_color(img.at(px / scale, py / scale));
      rgb.push_back(c.r);
      rgb.push_back(c.g);
      rgb.push_back(c.b);
    }
  }
  return encode_rgb(dim, dim, rgb);
}

}  // namespace msquid::png
