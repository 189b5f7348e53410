#pragma once
// RGB float images (planar, values in [0, 1]) and binary PPM I/O.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcnn/nn/tensor.hpp"

namespace mcnn {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // 3 planes of height x width

  Image() = default;
  Image(int w, int h, float fill = 0.0f);

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool empty() const { return width == 0 || height == 0; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Axis-aligned pixel rectangle, both ends inclusive.
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min + 1; }
  int height() const { return y_max - y_min + 1; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  friend bool operator==(const Box&, const Box&) = default;
};

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

Image flip_horizontal(const Image& image);

/// Bilinear resample of the inclusive box region to out_w x out_h. Samples
/// outside the box are clamped to its border.
Image crop_resize(const Image& image, const Box& box, int out_w, int out_h);
Image resize(const Image& image, int out_w, int out_h);

/// Stacks equally sized images into (n, 3, h, w) with values shifted to
/// [-0.5, 0.5].
template <typename T>
nn::Tensor<T> to_tensor(std::span<const Image* const> images);
template <typename T>
nn::Tensor<T> to_tensor(const Image& image) {
  const Image* one = &image;
  return to_tensor<T>(std::span<const Image* const>(&one, 1));
}

}  // namespace mcnn
