#pragma once

#include <filesystem>

#include "comofusion/imgcore.hpp"

namespace comofusion {

/// Reads a PNG/PGM/BMP raster as a unit-range gray image. Multi-channel input
/// is reduced with BT.601 luma weights (0.299 R + 0.587 G + 0.114 B); 16-bit
/// input is scaled by 1/65535.
GrayImage load_gray(const std::filesystem::path& path);

/// Writes an 8-bit grayscale image (format chosen by extension). Values are
/// converted from the image's range tag, rounded and clamped to [0, 255].
void save_gray(const GrayImage& img, const std::filesystem::path& path);

}  // namespace comofusion
