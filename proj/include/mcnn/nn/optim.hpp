#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcnn/nn/autodiff.hpp"

namespace mcnn::nn {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;  // drives batch order in the trainers

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// Momentum SGD with L2 weight decay:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
/// Gradients are zeroed after every step.
template <typename T>
class Sgd {
 public:
  Sgd(SgdConfig config, ParameterStore<T>& params);
  /// Optimises only the given parameters.
  Sgd(SgdConfig config, std::vector<Parameter<T>*> params);

  void step();
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<Parameter<T>*> params_;
  std::map<std::string, Tensor<T>> velocity_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace mcnn::nn
