#pragma once
// Reverse-mode automatic differentiation over Tensor values.
//
// Every operation returns a Var that owns its value and, when any input
// requires a gradient, a closure that pushes the output gradient into its
// inputs. backward() visits the graph in reverse topological order. Graphs
// are rebuilt on each forward pass and freed when the last Var goes away.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mcnn/nn/tensor.hpp"

namespace mcnn::nn {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use; same shape as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient buffer; empty tensor if backward never reached this node.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Builds an operation node. The value is checked for NaN/Inf.
  static Var make(Tensor<T> value, std::vector<Var> inputs, const char* op,
                  std::function<void(Node<T>&)> backward);

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Backpropagates from a scalar root (seed gradient 1).
template <typename T>
void backward(const Var<T>& root);

/// Backpropagates an explicit seed gradient of the root's shape.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Tensor<T> init);

  const std::string& name() const { return name_; }
  Var<T>& var() { return var_; }
  const Var<T>& var() const { return var_; }
  Tensor<T>& value() { return var_.mutable_value(); }
  const Tensor<T>& value() const { return var_.value(); }
  Tensor<T>& grad() { return var_.mutable_grad(); }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  Var<T> var_;
};

/// Owns a model's parameters; iteration is in name order.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<Parameter<T>*> all();
  /// Parameters whose name starts with `prefix`, in name order.
  std::vector<Parameter<T>*> with_prefix(const std::string& prefix);
  std::vector<const Parameter<T>*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::map<std::string, std::unique_ptr<Parameter<T>>> params_;
};

extern template class Var<float>;
extern template class Var<double>;
extern template class Parameter<float>;
extern template class Parameter<double>;
extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mcnn::nn
