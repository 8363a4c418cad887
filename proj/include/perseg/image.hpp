#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "perseg/tensor.hpp"

namespace perseg {

// Interleaved 8-bit image rows; ch is 1 (gray) or 3 (rgb).
struct ImageU8 {
  int w = 0, h = 0, ch = 0;
  std::vector<std::uint8_t> v;
};

// Integer label plane. Values are class ids or 255 (ignore).
struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  bool operator==(const Mask& o) const { return h == o.h && w == o.w && v == o.v; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
};

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);

Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

// [3, H, W] float in [0, 1]; exact k/255 values so write + read round-trips
// bit-identically.
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);

}  // namespace perseg
