#include "tta/tensor.hpp"

#include <string>

namespace tta {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename T>
Var<T> Graph<T>::leaf(Matrix<T> value, bool requires_grad) {
  Node& node = nodes_.emplace_back();
  node.value = std::move(value);
  node.requires_grad = requires_grad && record_grad_;
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::parameter(const Matrix<T>& storage, bool requires_grad) {
  Node& node = nodes_.emplace_back();
  node.external = &storage;
  node.requires_grad = requires_grad && record_grad_;
  node.op = "parameter";
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Matrix<T> value, std::initializer_list<Var<T>> inputs,
                        Backward backward) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  bool needs_grad = false;
  if (record_grad_) {
    for (const Var<T>& in : inputs) needs_grad = needs_grad || nodes_[in.index()].requires_grad;
  }
  Node& node = nodes_.emplace_back();
  node.value = std::move(value);
  node.op = op;
  node.requires_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Matrix<T>& Graph<T>::value(std::size_t index) const {
  const Node& node = nodes_[index];
  return node.external ? *node.external : node.value;
}

template <typename T>
Matrix<T> Graph<T>::grad(Var<T> v) const {
  const Node& node = nodes_[v.index()];
  if (node.grad.size() == 0) return Matrix<T>::Zero(v.rows(), v.cols());
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_string(loss.value()));
  }
  if (swept_) throw ContractError("backward already ran on this graph");
  swept_ = true;
  Node& root = nodes_[loss.index()];
  if (!root.requires_grad) return;
  root.grad = Matrix<T>::Ones(1, 1);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.grad);
    node.backward = nullptr;
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace tta
