#pragma once

#include <string>
#include <vector>

namespace ccdet {

// 8-bit interleaved row-major image; channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    int width = 0, height = 0, channels = 0;
    std::vector<unsigned char> pixels;

    std::size_t size() const { return std::size_t(width) * std::size_t(height) * std::size_t(channels); }
};

// Reads a PNG, normalizing to 8-bit gray or RGB (16-bit depth stripped,
// palette expanded, alpha dropped). Throws IoError if the file cannot be
// opened and FormatError if it is not a valid PNG.
ImageU8 read_png(const std::string& path);

// Writes an 8-bit gray or RGB PNG. Throws IoError on filesystem failure and
// ContractError on an unsupported channel count.
void write_png(const std::string& path, const ImageU8& img);

}  // namespace ccdet
