#include "mcnn/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mcnn::nn {

GradCheckReport check_gradients(const std::function<Var<double>()>& loss, std::vector<Var<double>> wrt,
                                const std::vector<std::string>& names, const GradCheckOptions& options) {
  for (auto& v : wrt) v.zero_grad();
  backward(loss());
  std::vector<Tensor<double>> analytic;
  analytic.reserve(wrt.size());
  for (auto& v : wrt) {
    analytic.push_back(v.grad().empty() ? Tensor<double>(v.shape()) : v.grad());
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor<double>& value = wrt[t].mutable_value();
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
      stride = (n + options.max_coords_per_tensor - 1) / options.max_coords_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = value[i];
      value[i] = orig + options.step;
      const double up = loss().value()[0];
      value[i] = orig - options.step;
      const double down = loss().value()[0];
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst = (t < names.size() ? names[t] : "input" + std::to_string(t)) + "[" + std::to_string(i) + "]";
      }
      ++report.coordinates;
    }
  }
  for (auto& v : wrt) v.zero_grad();
  return report;
}

GradCheckReport check_gradients(const std::function<Var<double>()>& loss, ParameterStore<double>& params,
                                std::vector<Var<double>> inputs, const GradCheckOptions& options) {
  std::vector<Var<double>> wrt;
  std::vector<std::string> names;
  for (Parameter<double>* p : params.all()) {
    wrt.push_back(p->var());
    names.push_back(p->name());
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    wrt.push_back(inputs[i]);
    names.push_back("input" + std::to_string(i));
  }
  return check_gradients(loss, std::move(wrt), names, options);
}

}  // namespace mcnn::nn
