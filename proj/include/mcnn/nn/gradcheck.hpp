#pragma once
// Central finite-difference gradient checker (64-bit).

#include <functional>
#include <string>
#include <vector>

#include "mcnn/nn/autodiff.hpp"

namespace mcnn::nn {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error, so coordinates whose true
  /// gradient is ~0 are compared absolutely.
  double scale_floor = 1e-4;
  /// Check at most this many coordinates per tensor (0 = all), spread evenly.
  std::size_t max_coords_per_tensor = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<tensor>[<index>]" of the largest relative error

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// `loss` must rebuild the graph from the current values of `wrt` and
/// return a scalar. Each coordinate is compared as
///   |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
GradCheckReport check_gradients(const std::function<Var<double>()>& loss, std::vector<Var<double>> wrt,
                                 const std::vector<std::string>& names = {},
                                 const GradCheckOptions& options = {});

/// Convenience overload checking every parameter in a store plus extra inputs.
GradCheckReport check_gradients(const std::function<Var<double>()>& loss, ParameterStore<double>& params,
                                std::vector<Var<double>> inputs = {}, const GradCheckOptions& options = {});

}  // namespace mcnn::nn
