#include "sofpi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "sofpi/jrrt.hpp"

namespace sofpi {

namespace {

using File = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_png(const std::filesystem::path& path, std::size_t h, std::size_t w, int color_type, int channels,
               const std::vector<std::uint8_t>& bytes) {
  if (h == 0 || w == 0) throw IoError("refusing to write an empty PNG to " + path.string());
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t i = 0; i < h; ++i)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + i * w * static_cast<std::size_t>(channels)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

// Piecewise-linear jet: dark blue -> blue -> cyan -> yellow -> red -> dark red.
void jet(double v, std::uint8_t* out) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  out[0] = to_byte(ramp(4.0 * v - 3.0));
  out[1] = to_byte(ramp(4.0 * v - 2.0));
  out[2] = to_byte(ramp(4.0 * v - 1.0));
}

void require_image(const char* what, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " expects an [H,W] image, got " + shape_string(t.shape()));
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const Tensor& img) {
  require_image("write_png_gray", img);
  std::vector<std::uint8_t> bytes(img.size());
  std::transform(img.vec().begin(), img.vec().end(), bytes.begin(), to_byte);
  write_png(path, img.shape()[0], img.shape()[1], PNG_COLOR_TYPE_GRAY, 1, bytes);
}

RgbImage error_map(const Tensor& recon, const Tensor& ref, double gain) {
  require_same_shape("error_map", recon, ref);
  require_image("error_map", recon);
  const std::size_t h = recon.shape()[0], w = recon.shape()[1];
  const std::size_t gap = 2, bar = std::max<std::size_t>(4, w / 16), ticks = 4;
  RgbImage out;
  out.height = h;
  out.width = w + gap + bar + ticks;
  out.rgb.assign(out.height * out.width * 3, 255);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) jet(gain * std::abs(recon.at(i, j) - ref.at(i, j)), &out.rgb[(i * out.width + j) * 3]);
  // Bar value runs from 1 at the top row to 0 at the bottom row.
  const double tick_step = 0.05 * gain;
  for (std::size_t i = 0; i < h; ++i) {
    const double v = h > 1 ? 1.0 - static_cast<double>(i) / static_cast<double>(h - 1) : 1.0;
    for (std::size_t j = 0; j < bar; ++j) jet(v, &out.rgb[(i * out.width + w + gap + j) * 3]);
  }
  if (tick_step > 0.0)
    for (double v = 0.0; v <= 1.0 + 1e-12; v += tick_step) {
      const auto i = static_cast<std::size_t>(std::lround((1.0 - v) * static_cast<double>(h - 1)));
      for (std::size_t j = w + gap + bar; j < out.width; ++j)
        std::fill_n(&out.rgb[(i * out.width + j) * 3], 3, std::uint8_t{0});
    }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
  write_png(path, img.height, img.width, PNG_COLOR_TYPE_RGB, 3, img.rgb);
}

void write_png_error(const std::filesystem::path& path, const Tensor& recon, const Tensor& ref, double gain) {
  write_png_rgb(path, error_map(recon, ref, gain));
}

Tensor read_png_gray(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + " is not an 8-bit grey PNG");
  }
  const std::size_t h = png_get_image_height(png, info), w = png_get_image_width(png, info);
  std::vector<std::uint8_t> row(w);
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = row[j] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace sofpi
