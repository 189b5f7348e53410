#include "mcnn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace mcnn {

Image::Image(int w, int h, float fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(3) * w * h, fill);
}

namespace {

int read_header_int(std::istream& in, const std::string& what) {
  int v = 0;
  in >> std::ws;
  while (in.peek() == '#') {
    std::string comment;
    std::getline(in, comment);
    in >> std::ws;
  }
  if (!(in >> v)) throw ImageIoError("malformed PPM header (" + what + ")");
  return v;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ImageIoError("'" + path.string() + "' is not a binary PPM (P6)");
  const int w = read_header_int(in, "width");
  const int h = read_header_int(in, "height");
  const int maxval = read_header_int(in, "maxval");
  if (w <= 0 || h <= 0 || maxval != 255) throw ImageIoError("unsupported PPM geometry in '" + path.string() + "'");
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ImageIoError("truncated PPM '" + path.string() + "'");
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write image '" + path.string() + "'");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        raw[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw ImageIoError("failed writing '" + path.string() + "'");
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image crop_resize(const Image& image, const Box& box, int out_w, int out_h) {
  if (box.x_min < 0 || box.y_min < 0 || box.x_max >= image.width || box.y_max >= image.height ||
      box.x_min > box.x_max || box.y_min > box.y_max) {
    throw std::invalid_argument("crop box outside image");
  }
  Image out(out_w, out_h);
  const double sx = static_cast<double>(box.width()) / out_w;
  const double sy = static_cast<double>(box.height()) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(box.y_min + (oy + 0.5) * sy - 0.5, double(box.y_min), double(box.y_max));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, box.y_max);
    const float wy = static_cast<float>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(box.x_min + (ox + 0.5) * sx - 0.5, double(box.x_min), double(box.x_max));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, box.x_max);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < 3; ++c) {
        const float top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const float bot = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, oy, ox) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image resize(const Image& image, int out_w, int out_h) {
  if (out_w == image.width && out_h == image.height) return image;
  return crop_resize(image, Box{0, 0, image.width - 1, image.height - 1}, out_w, out_h);
}

template <typename T>
nn::Tensor<T> to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const int w = images[0]->width, h = images[0]->height;
  nn::Tensor<T> t(nn::Shape{static_cast<int>(images.size()), 3, h, w});
  std::size_t o = 0;
  for (const Image* img : images) {
    if (img->width != w || img->height != h) throw std::invalid_argument("to_tensor: images differ in size");
    for (float v : img->data) t[o++] = static_cast<T>(v) - T(0.5);
  }
  return t;
}

template nn::Tensor<float> to_tensor(std::span<const Image* const>);
template nn::Tensor<double> to_tensor(std::span<const Image* const>);

}  // namespace mcnn
