#include "mcnn/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mcnn::nn {

void SgdConfig::validate() const {
  // A zero rate is accepted: it freezes the parameters, which the trainers
  // rely on for "no change" runs.
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("sgd: learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0, 1)");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
    throw std::invalid_argument("sgd: weight decay must be >= 0");
  }
}

template <typename T>
Sgd<T>::Sgd(SgdConfig config, ParameterStore<T>& params) : Sgd(config, params.all()) {}

template <typename T>
Sgd<T>::Sgd(SgdConfig config, std::vector<Parameter<T>*> params) : config_(config), params_(std::move(params)) {
  config_.validate();
}

template <typename T>
void Sgd<T>::step() {
  for (Parameter<T>* p : params_) {
    Tensor<T>& g = p->grad();
    if (!g.all_finite()) throw NumericError("sgd: non-finite gradient for '" + p->name() + "'");
  }
  const T lr = static_cast<T>(config_.learning_rate);
  const T mu = static_cast<T>(config_.momentum);
  const T wd = static_cast<T>(config_.weight_decay);
  for (Parameter<T>* p : params_) {
    Tensor<T>& w = p->value();
    Tensor<T>& g = p->grad();
    auto [it, fresh] = velocity_.try_emplace(p->name(), w.shape());
    Tensor<T>& v = it->second;
    if (lr != T(0)) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + (g[i] + wd * w[i]);
        w[i] -= lr * v[i];
      }
    }
    g.fill(T(0));
  }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace mcnn::nn
