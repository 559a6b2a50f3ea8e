#pragma once
// Minimal 8-bit RGB PNG writer (zlib-compressed, filter type None).

#include <cstdint>
#include <string>
#include <vector>

namespace hardbc::png {

/// `rgb` holds w*h*3 bytes, row-major starting from the TOP image row.
void write_rgb(const std::string& path, int w, int h,
               const std::vector<std::uint8_t>& rgb);

}  // namespace hardbc::png
