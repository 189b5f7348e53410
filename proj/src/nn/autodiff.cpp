#include "mcnn/nn/autodiff.hpp"

#include <unordered_set>

namespace mcnn::nn {

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->ensure_grad();
}

template <typename T>
void Var<T>::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(T(0));
}

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> inputs, const char* op,
                    std::function<void(Node<T>&)> backward) {
  require_finite(value, op);
  Var out;
  out.node_ = std::make_shared<Node<T>>();
  out.node_->value = std::move(value);
  out.node_->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

namespace {

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

template <typename T>
void run_backward(Node<T>* root) {
  const auto order = topo_order(root);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward) continue;
    if (node->grad.empty()) continue;  // nothing flowed here
    node->backward(*node);
  }
  for (Node<T>* node : order) {
    if (!node->grad.empty()) require_finite(node->grad, node->op);
  }
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() without a seed needs a scalar root, got " + root.shape().str());
  }
  if (!root.requires_grad()) return;
  root.node()->ensure_grad()[0] += T(1);
  run_backward(root.node().get());
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (seed.shape() != root.shape()) throw ShapeError("backward seed shape mismatch");
  if (!root.requires_grad()) return;
  auto& g = root.node()->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  run_backward(root.node().get());
}

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> init)
    : name_(std::move(name)), var_(std::move(init), true) {}

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> init) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  auto [it, inserted] = params_.emplace(name, nullptr);
  if (!inserted) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  it->second = std::make_unique<Parameter<T>>(name, std::move(init));
  return *it->second;
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return *it->second;
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return *it->second;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::with_prefix(const std::string& prefix) {
  std::vector<Parameter<T>*> out;
  for (auto& [name, p] : params_)
    if (name.starts_with(prefix)) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  out.reserve(params_.size());
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p->value().size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, p] : params_) p->zero_grad();
}

template class Var<float>;
template class Var<double>;
template class Parameter<float>;
template class Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template void backward(const Var<float>&);
template void backward(const Var<double>&);
template void backward(const Var<float>&, const Tensor<float>&);
template void backward(const Var<double>&, const Tensor<double>&);

}  // namespace mcnn::nn
