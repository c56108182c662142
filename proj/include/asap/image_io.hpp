#pragma once

#include <string>
#include <vector>

#include "asap/image.hpp"

namespace asap {

// Lossless RGB8 PNG with fixed encoder settings, so identical pixels always
// produce identical bytes.
void write_png(const std::string& path, const ImageU8& img);
std::vector<uint8_t> encode_png(const ImageU8& img);
ImageU8 read_png(const std::string& path);

}  // namespace asap
