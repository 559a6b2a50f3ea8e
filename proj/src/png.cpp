#include "hardbc/png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hardbc::png {

namespace {

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

void write_chunk(std::ofstream& f, const char type[4],
                 const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> head;
  put_u32(head, static_cast<std::uint32_t>(data.size()));
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  f.write(type, 4);
  if (!data.empty())
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty())
    crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<std::uint8_t> tail;
  put_u32(tail, static_cast<std::uint32_t>(crc));
  f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_rgb(const std::string& path, int w, int h,
               const std::vector<std::uint8_t>& rgb) {
  if (w <= 0 || h <= 0 ||
      rgb.size() != static_cast<std::size_t>(w) * h * 3)
    throw std::invalid_argument("png: bad image dimensions");

  // Scanlines, each prefixed with filter byte 0 (None).
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int j = 0; j < h; ++j) {
    raw.push_back(0);
    const auto* row = rgb.data() + static_cast<std::size_t>(j) * w * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(w) * 3);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: zlib compression failed");
  compressed.resize(bound);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png: cannot open " + path);
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  write_chunk(f, "IHDR", ihdr);
  write_chunk(f, "IDAT", compressed);
  write_chunk(f, "IEND", {});
}

}  // namespace hardbc::png
