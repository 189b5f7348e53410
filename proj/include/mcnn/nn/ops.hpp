#pragma once
// Differentiable operators. Shapes follow N x C x H x W throughout:
//   conv weight      (c_out, c_in, k, k), bias (1, c_out, 1, 1)
//   tconv weight     (c_in, c_out, k, k), no bias
//   linear weight    (out, in, 1, 1),      bias (1, out, 1, 1)
// Feature vectors are (n, d, 1, 1).

#include <cstdint>
#include <span>
#include <vector>

#include "mcnn/nn/autodiff.hpp"

namespace mcnn::nn {

inline constexpr int kIgnoreLabel = -1;
inline constexpr double kNormEpsilon = 1e-12;

enum class PoolMode { Average, Max };

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// Learned upsampling by `stride`; padding is (k - stride) / 2 so the output
/// is exactly stride times the input size.
template <typename T>
Var<T> transposed_conv2d(const Var<T>& input, const Var<T>& weight, int stride);

template <typename T>
Var<T> relu(const Var<T>& input);

/// Trailing rows/columns that do not fill a window are dropped. Gradient goes
/// to the first maximum in row-major window order.
template <typename T>
Var<T> maxpool2d(const Var<T>& input, int k, int stride);

/// Flattens each sample to c*h*w features before the affine map.
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

/// Mean negative log-likelihood over positions whose label is not
/// kIgnoreLabel. `labels` has one entry per (n, y, x) in row-major order.
/// Returns a 1x1x1x1 tensor; zero if every position is ignored.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Multiplies every channel by a {0,1} mask of shape (n or 1, 1, h, w).
/// The mask is data: it receives no gradient.
template <typename T>
Var<T> mask_mul(const Var<T>& input, const Tensor<T>& mask);

/// Global average or max over positions where the mask is 1. The average is
/// divided by the number of kept positions. An all-zero mask for a sample
/// pools over every position and records a warning.
template <typename T>
Var<T> masked_global_pool(const Var<T>& input, const Tensor<T>& mask, PoolMode mode);

/// Each sample divided by max(||x||_2, 1e-12).
template <typename T>
Var<T> l2_normalize(const Var<T>& input);

/// Channel concatenation; all parts share n, h and w.
template <typename T>
Var<T> concat_features(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape);

/// sum(input * weights) as a scalar; handy for scalarising outputs.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights);

// Non-differentiable helpers.

/// Softmax over channels at every (n, y, x).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Channel argmax at every (n, y, x); ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_channels(const Tensor<T>& scores);

/// Bilinear-interpolation kernel of size k for upsampling by `stride`,
/// laid out as a tconv weight (channels, channels, k, k) that maps channel
/// i to channel i only.
template <typename T>
Tensor<T> bilinear_upsample_weight(int channels, int k);

/// Fan-in scaled normal initialisation: N(0, 2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, std::uint64_t seed);

}  // namespace mcnn::nn
