#pragma once

#include "posfeat/common.hpp"

#include <string>

namespace posfeat {

/// Binary PGM (P5), 8-bit. Values are clamped to [0,1] and rounded.
void write_pgm(const std::string& path, const Image& image);

/// Reads binary PGM (P5, 8 or 16 bit) or PPM (P6, converted to luma).
Image read_image(const std::string& path);

/// Rounds to the 8-bit grid so that a PGM round trip is exact.
Image quantize8(const Image& image);

/// Crops from the top-left corner so both dimensions are multiples of `multiple`.
Image crop_to_multiple(const Image& image, int multiple = 16);

}  // namespace posfeat
