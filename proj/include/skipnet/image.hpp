#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skipnet/tensor.hpp"

namespace skipnet {

// A decoded single-channel image. Samples are stored widened to 16 bits;
// `max_value` keeps the source bit depth (255 or 65535) so callers can
// normalize by the right maximum.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t max_value = 255;
  std::vector<std::uint16_t> pixels;  // row-major, height * width

  std::uint16_t at(std::size_t y, std::size_t x) const {
    return pixels[y * width + x];
  }
};

// Reads a grayscale PNG (8- or 16-bit, non-interlaced) or binary PGM (P5),
// dispatching on the file's magic bytes. Failures throw DataError naming the
// path and the reason.
Image read_image(const std::string& path);

// Decoders for in-memory bytes (used by read_image and by tests).
Image decode_png(const std::vector<std::uint8_t>& bytes,
                 const std::string& origin);
Image decode_pgm(const std::vector<std::uint8_t>& bytes,
                 const std::string& origin);

// Writes an 8-bit grayscale PNG (color type 0, filter 0 on every scanline).
// Deterministic bytes for identical input. `pixels` is row-major h*w.
void write_png(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t width, std::size_t height);
std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels,
                                     std::size_t width, std::size_t height);

// Writes a binary PGM (P5), 8-bit.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t width, std::size_t height);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes);

}  // namespace skipnet
