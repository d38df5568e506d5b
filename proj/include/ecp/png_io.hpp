#ifndef ECP_PNG_IO_HPP
#define ECP_PNG_IO_HPP

#include <string>

#include "ecp/image.hpp"

namespace ecp {

/// Read an 8-bit PNG; color images are returned as RGB, palettes expanded.
RgbImage readPngRgb(const std::string& path);
/// Read an 8-bit PNG as grayscale (color inputs converted via luma weights).
GrayImage readPngGray(const std::string& path);

void writePng(const std::string& path, const GrayImage& image);
void writePng(const std::string& path, const RgbImage& image);

}  // namespace ecp

#endif
