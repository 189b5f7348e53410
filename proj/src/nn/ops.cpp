#include "mcnn/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mcnn/diagnostics.hpp"
#include "mcnn/kernels/gemm.hpp"
#include "mcnn/rng.hpp"

namespace mcnn::nn {
namespace {

struct ConvGeom {
  int channels, height, width;  // image side
  int k, stride, pad;
  int out_h, out_w;             // column grid
  int rows() const { return channels * k * k; }
  int cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T* dst = col + static_cast<std::ptrdiff_t>((c * g.k + ki) * g.k + kj) * cols;
        const T* plane = img + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* drow = dst + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(drow, drow + g.out_w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            drow[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T* src = col + static_cast<std::ptrdiff_t>((c * g.k + ki) * g.k + kj) * cols;
        T* plane = img + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const T* srow = src + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          T* drow = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

bool is_identity_geom(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

std::string shape_msg(const char* op, const std::string& what) { return std::string(op) + ": " + what; }

template <typename T>
void check_mask(const Tensor<T>& mask, const Shape& in, const char* op) {
  const Shape& m = mask.shape();
  if (m.c != 1 || m.h != in.h || m.w != in.w || (m.n != 1 && m.n != in.n)) {
    throw ShapeError(shape_msg(op, "mask shape " + m.str() + " incompatible with " + in.str()));
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != T(0) && mask[i] != T(1)) {
      throw std::invalid_argument(shape_msg(op, "mask values must be exactly 0 or 1"));
    }
  }
}

template <typename T>
const T* mask_plane(const Tensor<T>& mask, int n) {
  return mask.data() + (mask.shape().n == 1 ? 0 : static_cast<std::size_t>(n) * mask.shape().plane());
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  if (stride <= 0 || pad < 0) throw ShapeError("conv2d: stride must be positive and pad nonnegative");
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.c != in.c) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) throw ShapeError("conv2d: bias shape " + bias.shape().str());
  const int k = ws.h;
  const int num_h = in.h + 2 * pad - k;
  const int num_w = in.w + 2 * pad - k;
  if (num_h < 0 || num_w < 0) throw ShapeError("conv2d: non-positive output size for input " + in.str());
  ConvGeom g{in.c, in.h, in.w, k, stride, pad, num_h / stride + 1, num_w / stride + 1};
  const int cout = ws.n;
  const int rows = g.rows();
  const int cols = g.cols();
  const bool direct = is_identity_geom(g);

  Tensor<T> out(Shape{in.n, cout, g.out_h, g.out_w});
  auto col_store = std::make_shared<std::vector<T>>();
  if (!direct) col_store->resize(static_cast<std::size_t>(in.n) * rows * cols);
  const T* w = weight.value().data();
  const T* b = bias.value().data();
  for (int n = 0; n < in.n; ++n) {
    const T* img = input.value().data() + static_cast<std::size_t>(n) * in.sample();
    const T* col = img;
    if (!direct) {
      T* dst = col_store->data() + static_cast<std::size_t>(n) * rows * cols;
      im2col(img, g, dst);
      col = dst;
    }
    T* o = out.data() + static_cast<std::size_t>(n) * out.shape().sample();
    kernels::gemm(false, false, cout, cols, rows, w, rows, col, cols, T(0), o, cols);
    for (int co = 0; co < cout; ++co) {
      T* orow = o + static_cast<std::ptrdiff_t>(co) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += b[co];
    }
  }

  return Var<T>::make(std::move(out), {input, weight, bias}, "conv2d",
                      [g, cout, rows, cols, direct, col_store](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& wn = *self.inputs[1];
    auto& bn = *self.inputs[2];
    const int batch = x.value.shape().n;
    const std::size_t out_sample = static_cast<std::size_t>(cout) * cols;
    std::vector<T> dcol(direct ? 0 : static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < batch; ++n) {
      const T* dy = self.grad.data() + static_cast<std::size_t>(n) * out_sample;
      const T* col = direct ? x.value.data() + static_cast<std::size_t>(n) * x.value.shape().sample()
                            : col_store->data() + static_cast<std::size_t>(n) * rows * cols;
      if (wn.requires_grad) {
        kernels::gemm(false, true, cout, rows, cols, dy, cols, col, cols, T(1), wn.ensure_grad().data(),
                      rows);
      }
      if (bn.requires_grad) {
        T* db = bn.ensure_grad().data();
        for (int co = 0; co < cout; ++co) {
          const T* row = dy + static_cast<std::ptrdiff_t>(co) * cols;
          T s = T(0);
          for (int j = 0; j < cols; ++j) s += row[j];
          db[co] += s;
        }
      }
      if (x.requires_grad) {
        T* dx = x.ensure_grad().data() + static_cast<std::size_t>(n) * x.value.shape().sample();
        if (direct) {
          kernels::gemm(true, false, rows, cols, cout, wn.value.data(), rows, dy, cols, T(1), dx, cols);
        } else {
          kernels::gemm(true, false, rows, cols, cout, wn.value.data(), rows, dy, cols, T(0), dcol.data(),
                        cols);
          col2im_add(dcol.data(), g, dx);
        }
      }
    }
  });
}

template <typename T>
Var<T> transposed_conv2d(const Var<T>& input, const Var<T>& weight, int stride) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  if (stride <= 0) throw ShapeError("transposed_conv2d: stride must be positive");
  if (ws.h != ws.w) throw ShapeError("transposed_conv2d: kernel must be square");
  if (ws.n != in.c) throw ShapeError("transposed_conv2d: weight expects " + std::to_string(ws.n) + " input channels");
  const int k = ws.h;
  if (k < stride || (k - stride) % 2 != 0) {
    throw std::invalid_argument("transposed_conv2d: kernel " + std::to_string(k) +
                                " incompatible with stride " + std::to_string(stride) +
                                " (need k >= stride and k - stride even)");
  }
  const int pad = (k - stride) / 2;
  const int cin = in.c;
  const int cout = ws.c;
  // The output image plays the role of the convolution input; the input grid
  // is the column grid.
  ConvGeom g{cout, in.h * stride, in.w * stride, k, stride, pad, in.h, in.w};
  const int rows = g.rows();
  const int cols = g.cols();

  Tensor<T> out(Shape{in.n, cout, g.height, g.width});
  std::vector<T> colbuf(static_cast<std::size_t>(rows) * cols);
  for (int n = 0; n < in.n; ++n) {
    const T* x = input.value().data() + static_cast<std::size_t>(n) * in.sample();
    kernels::gemm(true, false, rows, cols, cin, weight.value().data(), rows, x, cols, T(0), colbuf.data(), cols);
    col2im_add(colbuf.data(), g, out.data() + static_cast<std::size_t>(n) * out.shape().sample());
  }

  return Var<T>::make(std::move(out), {input, weight}, "transposed_conv2d",
                      [g, cin, rows, cols](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& wn = *self.inputs[1];
    const int batch = x.value.shape().n;
    std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < batch; ++n) {
      im2col(self.grad.data() + static_cast<std::size_t>(n) * self.value.shape().sample(), g, dcol.data());
      if (x.requires_grad) {
        T* dx = x.ensure_grad().data() + static_cast<std::size_t>(n) * x.value.shape().sample();
        kernels::gemm(false, false, cin, cols, rows, wn.value.data(), rows, dcol.data(), cols, T(1), dx, cols);
      }
      if (wn.requires_grad) {
        const T* xv = x.value.data() + static_cast<std::size_t>(n) * x.value.shape().sample();
        kernels::gemm(false, true, cin, rows, cols, xv, cols, dcol.data(), cols, T(1), wn.ensure_grad().data(),
                      rows);
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return Var<T>::make(std::move(out), {input}, "relu", [](Node<T>& self) {
    auto& x = *self.inputs[0];
    T* dx = x.ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.value[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& input, int k, int stride) {
  const Shape in = input.shape();
  if (k <= 0 || stride <= 0) throw ShapeError("maxpool2d: window and stride must be positive");
  if (k > in.h || k > in.w) {
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " larger than input " + in.str());
  }
  const int oh = (in.h - k) / stride + 1;
  const int ow = (in.w - k) / stride + 1;
  Tensor<T> out(Shape{in.n, in.c, oh, ow});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* x = input.value().data();
  std::size_t o = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * in.c + c) * in.plane();
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = base + static_cast<std::size_t>(oy * stride) * in.w + ox * stride;
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              const std::size_t idx = base + static_cast<std::size_t>(oy * stride + i) * in.w + ox * stride + j;
              if (x[idx] > x[best]) best = idx;
            }
          }
          out[o] = x[best];
          (*arg)[o] = best;
        }
      }
    }
  }
  return Var<T>::make(std::move(out), {input}, "maxpool2d", [arg](Node<T>& self) {
    T* dx = self.inputs[0]->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[(*arg)[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const Shape in = input.shape();
  const Shape ws = weight.shape();
  const int d = static_cast<int>(in.sample());
  if (ws.h != 1 || ws.w != 1 || ws.c != d) {
    throw ShapeError("linear: input dim " + std::to_string(d) + " does not match weight " + ws.str());
  }
  const int classes = ws.n;
  if (bias.shape() != Shape{1, classes, 1, 1}) throw ShapeError("linear: bias shape " + bias.shape().str());
  Tensor<T> out(Shape{in.n, classes, 1, 1});
  // out (n x classes) = x (n x d) * W^T (d x classes)
  kernels::gemm(false, true, in.n, classes, d, input.value().data(), d, weight.value().data(), d, T(0),
                out.data(), classes);
  for (int n = 0; n < in.n; ++n) {
    for (int j = 0; j < classes; ++j) out[static_cast<std::size_t>(n) * classes + j] += bias.value()[j];
  }
  return Var<T>::make(std::move(out), {input, weight, bias}, "linear", [d, classes](Node<T>& self) {
    auto& x = *self.inputs[0];
    auto& wn = *self.inputs[1];
    auto& bn = *self.inputs[2];
    const int batch = x.value.shape().n;
    const T* dy = self.grad.data();
    if (x.requires_grad) {
      kernels::gemm(false, false, batch, d, classes, dy, classes, wn.value.data(), d, T(1),
                    x.ensure_grad().data(), d);
    }
    if (wn.requires_grad) {
      kernels::gemm(true, false, classes, d, batch, dy, classes, x.value.data(), d, T(1),
                    wn.ensure_grad().data(), d);
    }
    if (bn.requires_grad) {
      T* db = bn.ensure_grad().data();
      for (int n = 0; n < batch; ++n) {
        for (int j = 0; j < classes; ++j) db[j] += dy[static_cast<std::size_t>(n) * classes + j];
      }
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  const std::size_t positions = static_cast<std::size_t>(s.n) * s.plane();
  if (labels.size() != positions) {
    throw ShapeError("softmax_cross_entropy: expected " + std::to_string(positions) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (int label : labels) {
    if (label != kIgnoreLabel && (label < 0 || label >= s.c)) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(s.c) + ")");
    }
  }
  auto dlogits = std::make_shared<Tensor<T>>(s);
  const T* x = logits.value().data();
  const std::size_t plane = s.plane();
  std::size_t count = 0;
  for (int label : labels) count += label != kIgnoreLabel ? 1 : 0;
  double total = 0.0;
  std::vector<double> prob(static_cast<std::size_t>(s.c));
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const int label = labels[static_cast<std::size_t>(n) * plane + p];
      if (label == kIgnoreLabel) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(x[base + c * plane + p]));
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) {
        prob[c] = std::exp(static_cast<double>(x[base + c * plane + p]) - mx);
        z += prob[c];
      }
      total += std::log(z) + mx - static_cast<double>(x[base + label * plane + p]);
      for (int c = 0; c < s.c; ++c) {
        const double g = prob[c] / z - (c == label ? 1.0 : 0.0);
        (*dlogits)[base + c * plane + p] = static_cast<T>(g / static_cast<double>(count));
      }
    }
  }
  Tensor<T> out(Shape{1, 1, 1, 1}, count == 0 ? T(0) : static_cast<T>(total / static_cast<double>(count)));
  return Var<T>::make(std::move(out), {logits}, "softmax_cross_entropy", [dlogits](Node<T>& self) {
    const T g = self.grad[0];
    T* dx = self.inputs[0]->ensure_grad().data();
    for (std::size_t i = 0; i < dlogits->size(); ++i) dx[i] += g * (*dlogits)[i];
  });
}

template <typename T>
Var<T> mask_mul(const Var<T>& input, const Tensor<T>& mask) {
  const Shape in = input.shape();
  check_mask(mask, in, "mask_mul");
  auto m = std::make_shared<Tensor<T>>(mask);
  Tensor<T> out(in);
  const T* x = input.value().data();
  for (int n = 0; n < in.n; ++n) {
    const T* mp = mask_plane(*m, n);
    for (int c = 0; c < in.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * in.c + c) * in.plane();
      for (std::size_t p = 0; p < in.plane(); ++p) out[base + p] = mp[p] != T(0) ? x[base + p] : T(0);
    }
  }
  return Var<T>::make(std::move(out), {input}, "mask_mul", [m](Node<T>& self) {
    const Shape s = self.value.shape();
    T* dx = self.inputs[0]->ensure_grad().data();
    for (int n = 0; n < s.n; ++n) {
      const T* mp = mask_plane(*m, n);
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        for (std::size_t p = 0; p < s.plane(); ++p) {
          if (mp[p] != T(0)) dx[base + p] += self.grad[base + p];
        }
      }
    }
  });
}

template <typename T>
Var<T> masked_global_pool(const Var<T>& input, const Tensor<T>& mask, PoolMode mode) {
  const Shape in = input.shape();
  if (in.numel() == 0) throw ShapeError("masked_global_pool: empty input");
  check_mask(mask, in, "masked_global_pool");
  const std::size_t plane = in.plane();
  // Kept positions per sample, after the all-zero fallback.
  auto kept = std::make_shared<std::vector<std::vector<std::size_t>>>(static_cast<std::size_t>(in.n));
  for (int n = 0; n < in.n; ++n) {
    const T* mp = mask_plane(mask, n);
    auto& k = (*kept)[n];
    for (std::size_t p = 0; p < plane; ++p) {
      if (mp[p] != T(0)) k.push_back(p);
    }
    if (k.empty()) {
      warn("masked_global_pool: all-zero mask for sample " + std::to_string(n) +
           "; pooling over all positions");
      for (std::size_t p = 0; p < plane; ++p) k.push_back(p);
    }
  }
  Tensor<T> out(Shape{in.n, in.c, 1, 1});
  auto arg = std::make_shared<std::vector<std::size_t>>(mode == PoolMode::Max ? out.size() : 0);
  const T* x = input.value().data();
  for (int n = 0; n < in.n; ++n) {
    const auto& k = (*kept)[n];
    for (int c = 0; c < in.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * in.c + c) * plane;
      const std::size_t o = static_cast<std::size_t>(n) * in.c + c;
      if (mode == PoolMode::Average) {
        T s = T(0);
        for (std::size_t p : k) s += x[base + p];
        out[o] = s / static_cast<T>(k.size());
      } else {
        std::size_t best = base + k.front();
        for (std::size_t p : k) {
          if (x[base + p] > x[best]) best = base + p;
        }
        out[o] = x[best];
        (*arg)[o] = best;
      }
    }
  }
  return Var<T>::make(std::move(out), {input}, mode == PoolMode::Average ? "masked_avg_pool" : "masked_max_pool",
                      [kept, arg, mode, plane](Node<T>& self) {
    const Shape s = self.value.shape();
    T* dx = self.inputs[0]->ensure_grad().data();
    for (int n = 0; n < s.n; ++n) {
      const auto& k = (*kept)[n];
      for (int c = 0; c < s.c; ++c) {
        const std::size_t o = static_cast<std::size_t>(n) * s.c + c;
        if (mode == PoolMode::Average) {
          const std::size_t base = o * plane;
          const T g = self.grad[o] / static_cast<T>(k.size());
          for (std::size_t p : k) dx[base + p] += g;
        } else {
          dx[(*arg)[o]] += self.grad[o];
        }
      }
    }
  });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& input) {
  const Shape in = input.shape();
  const std::size_t d = in.sample();
  Tensor<T> out(in);
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(in.n));
  const T* x = input.value().data();
  for (int n = 0; n < in.n; ++n) {
    const T* row = x + static_cast<std::size_t>(n) * d;
    T ss = T(0);
    for (std::size_t i = 0; i < d; ++i) ss += row[i] * row[i];
    const T denom = std::max(std::sqrt(ss), static_cast<T>(kNormEpsilon));
    (*norms)[n] = std::sqrt(ss);
    for (std::size_t i = 0; i < d; ++i) out[static_cast<std::size_t>(n) * d + i] = row[i] / denom;
  }
  return Var<T>::make(std::move(out), {input}, "l2_normalize", [norms, d](Node<T>& self) {
    const int batch = self.value.shape().n;
    T* dx = self.inputs[0]->ensure_grad().data();
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * d;
      const T norm = (*norms)[n];
      const T* g = self.grad.data() + off;
      if (norm > static_cast<T>(kNormEpsilon)) {
        const T* y = self.value.data() + off;
        T yg = T(0);
        for (std::size_t i = 0; i < d; ++i) yg += y[i] * g[i];
        for (std::size_t i = 0; i < d; ++i) dx[off + i] += (g[i] - y[i] * yg) / norm;
      } else {
        for (std::size_t i = 0; i < d; ++i) dx[off + i] += g[i] / static_cast<T>(kNormEpsilon);
      }
    }
  });
}

template <typename T>
Var<T> concat_features(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_features: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n) throw ShapeError("concat_features: batch mismatch " + s.str() + " vs " + first.str());
    if (s.h != first.h || s.w != first.w) throw ShapeError("concat_features: spatial mismatch");
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor<T> out(os);
  const std::size_t plane = os.plane();
  int offset = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Shape s = p.shape();
    for (int n = 0; n < s.n; ++n) {
      const T* src = p.value().data() + static_cast<std::size_t>(n) * s.sample();
      std::copy(src, src + s.sample(), out.data() + static_cast<std::size_t>(n) * os.sample() + offset * plane);
    }
    offset += s.c;
  }
  return Var<T>::make(std::move(out), parts, "concat_features", [offsets](Node<T>& self) {
    const Shape os = self.value.shape();
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      auto& in = *self.inputs[i];
      if (!in.requires_grad) continue;
      const Shape s = in.value.shape();
      T* dx = in.ensure_grad().data();
      for (int n = 0; n < s.n; ++n) {
        const T* g = self.grad.data() + static_cast<std::size_t>(n) * os.sample() + offsets[i] * os.plane();
        T* d = dx + static_cast<std::size_t>(n) * s.sample();
        for (std::size_t j = 0; j < s.sample(); ++j) d[j] += g[j];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      T* d = in->ensure_grad().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape) {
  return Var<T>::make(input.value().reshaped(shape), {input}, "reshape", [](Node<T>& self) {
    T* d = self.inputs[0]->ensure_grad().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights) {
  if (weights.shape() != input.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < weights.size(); ++i) s += input.value()[i] * weights[i];
  auto w = std::make_shared<Tensor<T>>(weights);
  return Var<T>::make(Tensor<T>(Shape{1, 1, 1, 1}, s), {input}, "weighted_sum", [w](Node<T>& self) {
    T* d = self.inputs[0]->ensure_grad().data();
    for (std::size_t i = 0; i < w->size(); ++i) d[i] += self.grad[0] * (*w)[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(logits[base + c * plane + p]));
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(static_cast<double>(logits[base + c * plane + p]) - mx);
      for (int c = 0; c < s.c; ++c) {
        out[base + c * plane + p] =
            static_cast<T>(std::exp(static_cast<double>(logits[base + c * plane + p]) - mx) / z);
      }
    }
  }
  return out;
}

template <typename T>
std::vector<int> argmax_channels(const Tensor<T>& scores) {
  const Shape s = scores.shape();
  const std::size_t plane = s.plane();
  std::vector<int> out(static_cast<std::size_t>(s.n) * plane);
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (scores[base + c * plane + p] > scores[base + best * plane + p]) best = c;
      }
      out[static_cast<std::size_t>(n) * plane + p] = best;
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_upsample_weight(int channels, int k) {
  if (channels <= 0 || k <= 0) throw ShapeError("bilinear_upsample_weight: bad size");
  const int factor = (k + 1) / 2;
  const double center = (k % 2 == 1) ? factor - 1 : factor - 0.5;
  Tensor<T> w(Shape{channels, channels, k, k});
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double v = (1.0 - std::abs(i - center) / factor) * (1.0 - std::abs(j - center) / factor);
        w.at(c, c, i, j) = static_cast<T>(v);
      }
    }
  }
  return w;
}

template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, std::uint64_t seed) {
  Tensor<T> t(shape);
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(std::max(fan_in, 1)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

#define MCNN_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);            \
  template Var<T> transposed_conv2d(const Var<T>&, const Var<T>&, int);                     \
  template Var<T> relu(const Var<T>&);                                                      \
  template Var<T> maxpool2d(const Var<T>&, int, int);                                       \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);               \
  template Var<T> mask_mul(const Var<T>&, const Tensor<T>&);                                \
  template Var<T> masked_global_pool(const Var<T>&, const Tensor<T>&, PoolMode);            \
  template Var<T> l2_normalize(const Var<T>&);                                              \
  template Var<T> concat_features(const std::vector<Var<T>>&);                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                            \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                            \
  template Tensor<T> softmax(const Tensor<T>&);                                             \
  template std::vector<int> argmax_channels(const Tensor<T>&);                              \
  template Tensor<T> bilinear_upsample_weight(int, int);                                    \
  template Tensor<T> he_normal(Shape, int, std::uint64_t);

MCNN_INSTANTIATE_OPS(float)
MCNN_INSTANTIATE_OPS(double)

}  // namespace mcnn::nn
