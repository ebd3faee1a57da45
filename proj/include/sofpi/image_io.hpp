// PNG previews: grey-level reconstructions and colour-mapped error maps.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sofpi/tensor.hpp"

namespace sofpi {

/// Linear [0,1] -> 0..255 grey, values outside clamped.
void write_png_gray(const std::filesystem::path& path, const Tensor& img);

/// Absolute error times `gain`, clamped to [0,1] and colour-mapped, with a
/// colour bar on the right. Tick marks on the bar are every 0.05 of absolute
/// error, so the default gain of 5 puts the top of the bar at 0.2.
void write_png_error(const std::filesystem::path& path, const Tensor& recon, const Tensor& ref, double gain = 5.0);

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

RgbImage error_map(const Tensor& recon, const Tensor& ref, double gain = 5.0);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& img);

/// Reads an 8-bit grey PNG back as [H,W] values in [0,1]; used by tests.
Tensor read_png_gray(const std::filesystem::path& path);

}  // namespace sofpi
