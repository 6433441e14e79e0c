#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace replan {

// 8-bit channels-first image. Pixel values read back as floats in [0,1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // CHW

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, 0) {}

  std::uint8_t& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  std::uint8_t at(int c, int y, int x) const {
    return data[(std::size_t(c) * height + y) * width + x];
  }
  float value(int c, int y, int x) const { return float(at(c, y, x)) / 255.0f; }

  bool operator==(const Image& other) const = default;
};

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(std::size_t(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return data[std::size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[std::size_t(y) * width + x]; }
  std::int64_t count() const;
  bool operator==(const Mask& other) const = default;
};

std::uint8_t quantize_unit(double v);

// [3,H,W] float tensor in [0,1].
torch::Tensor to_tensor(const Image& image);
// Stacks images into [B,C,H,W].
torch::Tensor to_batch(const std::vector<const Image*>& images);
// Accepts [C,H,W] or [1,C,H,W]; values are clamped to [0,1].
Image from_tensor(const torch::Tensor& tensor);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Side-by-side concatenation of equally sized images with a 1 pixel gutter.
Image hstack(const std::vector<Image>& images);

}  // namespace replan
