#include "skipnet/image.hpp"

#include <zlib.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <limits>

#include "skipnet/error.hpp"

namespace skipnet {

namespace {

constexpr std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
constexpr std::size_t kMaxImageExtent = 1u << 20;

[[noreturn]] void bad(const std::string& origin, const std::string& why) {
  throw DataError("cannot decode '" + origin + "': " + why);
}

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
  const int p = int(a) + int(b) - int(c);
  const int pa = std::abs(p - int(a));
  const int pb = std::abs(p - int(b));
  const int pc = std::abs(p - int(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  push_be32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  push_be32(out, static_cast<std::uint32_t>(
                     crc32(0, body.data(), static_cast<uInt>(body.size()))));
}

struct PgmScanner {
  const std::vector<std::uint8_t>& bytes;
  const std::string& origin;
  std::size_t pos = 0;

  // Skips whitespace and '#' comments, then reads a decimal token.
  std::size_t next_number() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      bad(origin, "malformed PGM header");
    }
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > std::numeric_limits<std::uint32_t>::max()) {
        bad(origin, "PGM header value out of range");
      }
      ++pos;
    }
    return value;
  }
};

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file '" + path + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  if (in.bad()) throw IoError("failed reading file '" + path + "'");
  return bytes;
}

void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing file '" + path + "'");
}

Image decode_png(const std::vector<std::uint8_t>& bytes,
                 const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
    bad(origin, "not a PNG file");
  }

  std::size_t width = 0, height = 0, bit_depth = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> compressed;

  std::size_t pos = 8;
  while (pos < bytes.size() && !saw_iend) {
    if (pos + 8 > bytes.size()) bad(origin, "truncated chunk header");
    const std::uint32_t length = read_be32(&bytes[pos]);
    if (pos + 12 + length > bytes.size()) bad(origin, "truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    const std::uint32_t stored_crc = read_be32(&bytes[pos + 8 + length]);
    const std::uint32_t actual_crc = static_cast<std::uint32_t>(
        crc32(0, &bytes[pos + 4], static_cast<uInt>(4 + length)));
    if (stored_crc != actual_crc) {
      bad(origin, std::string("chunk ") + std::string(type, 4) +
                      " fails its CRC");
    }

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (length != 13) bad(origin, "IHDR has wrong length");
      width = read_be32(data);
      height = read_be32(data + 4);
      bit_depth = data[8];
      const std::uint8_t color_type = data[9];
      const std::uint8_t interlace = data[12];
      if (width == 0 || height == 0 || width > kMaxImageExtent ||
          height > kMaxImageExtent) {
        bad(origin, "unreasonable image dimensions");
      }
      if (color_type != 0) {
        bad(origin, "only grayscale (color type 0) PNGs are supported");
      }
      if (bit_depth != 8 && bit_depth != 16) {
        bad(origin, "only 8- or 16-bit PNGs are supported");
      }
      if (data[10] != 0 || data[11] != 0) {
        bad(origin, "unknown compression or filter method");
      }
      if (interlace != 0) bad(origin, "interlaced PNGs are not supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!saw_ihdr) bad(origin, "IDAT before IHDR");
      compressed.insert(compressed.end(), data, data + length);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    // Ancillary chunks are skipped.
    pos += 12 + length;
  }
  if (!saw_ihdr) bad(origin, "missing IHDR");
  if (!saw_iend) bad(origin, "missing IEND");
  if (compressed.empty()) bad(origin, "missing IDAT");

  const std::size_t bpp = bit_depth / 8;
  const std::size_t stride = width * bpp;
  const std::size_t raw_size = height * (stride + 1);
  std::vector<std::uint8_t> raw(raw_size);
  uLongf dest_len = static_cast<uLongf>(raw_size);
  const int zrc = uncompress(raw.data(), &dest_len, compressed.data(),
                             static_cast<uLong>(compressed.size()));
  if (zrc != Z_OK || dest_len != raw_size) {
    bad(origin, "IDAT stream does not inflate to the expected size");
  }

  // Undo per-scanline filtering in place (recon values replace raw ones).
  std::vector<std::uint8_t> recon(height * stride);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = &raw[y * (stride + 1) + 1];
    std::uint8_t* dst = &recon[y * stride];
    const std::uint8_t* up = y > 0 ? &recon[(y - 1) * stride] : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const std::uint8_t a = x >= bpp ? dst[x - bpp] : 0;
      const std::uint8_t b = up ? up[x] : 0;
      const std::uint8_t c = (up && x >= bpp) ? up[x - bpp] : 0;
      std::uint8_t v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v = static_cast<std::uint8_t>(v + a); break;
        case 2: v = static_cast<std::uint8_t>(v + b); break;
        case 3: v = static_cast<std::uint8_t>(v + (int(a) + int(b)) / 2); break;
        case 4: v = static_cast<std::uint8_t>(v + paeth(a, b, c)); break;
        default: bad(origin, "unknown scanline filter type");
      }
      dst[x] = v;
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.max_value = bit_depth == 8 ? 255u : 65535u;
  img.pixels.resize(width * height);
  if (bit_depth == 8) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = recon[i];
  } else {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint16_t>(
          (std::uint16_t(recon[2 * i]) << 8) | recon[2 * i + 1]);
    }
  }
  return img;
}

Image decode_pgm(const std::vector<std::uint8_t>& bytes,
                 const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    bad(origin, "not a binary PGM (P5) file");
  }
  PgmScanner scan{bytes, origin, 2};
  const std::size_t width = scan.next_number();
  const std::size_t height = scan.next_number();
  const std::size_t maxval = scan.next_number();
  if (width == 0 || height == 0 || width > kMaxImageExtent ||
      height > kMaxImageExtent) {
    bad(origin, "unreasonable image dimensions");
  }
  if (maxval == 0 || maxval > 65535) bad(origin, "PGM maxval out of range");
  if (scan.pos >= bytes.size() || !std::isspace(bytes[scan.pos])) {
    bad(origin, "malformed PGM header");
  }
  ++scan.pos;  // exactly one whitespace byte separates header and samples

  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const std::size_t expected = width * height * bpp;
  if (bytes.size() - scan.pos < expected) bad(origin, "truncated PGM samples");

  Image img;
  img.width = width;
  img.height = height;
  img.max_value = static_cast<std::uint32_t>(maxval);
  img.pixels.resize(width * height);
  const std::uint8_t* src = &bytes[scan.pos];
  if (bpp == 1) {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = src[i];
  } else {
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint16_t>(
          (std::uint16_t(src[2 * i]) << 8) | src[2 * i + 1]);
    }
  }
  return img;
}

Image read_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    return decode_pgm(bytes, path);
  }
  throw DataError("cannot decode '" + path +
                  "': not a PNG or binary PGM file");
}

std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels,
                                     std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || pixels.size() != width * height) {
    throw UsageError("encode_png: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter type: none
    raw.insert(raw.end(), pixels.begin() + y * width,
               pixels.begin() + (y + 1) * width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("encode_png: deflate failed");
  }
  compressed.resize(bound);

  std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);
  std::vector<std::uint8_t> ihdr;
  push_be32(ihdr, static_cast<std::uint32_t>(width));
  push_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t width, std::size_t height) {
  write_file_bytes(path, encode_png(pixels, width, height));
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || pixels.size() != width * height) {
    throw UsageError("write_pgm: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> out;
  const std::string header = "P5\n" + std::to_string(width) + " " +
                             std::to_string(height) + "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_file_bytes(path, out);
}

}  // namespace skipnet
