#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>

#include "tta/errors.hpp"

namespace tta {

/// Dense row-major matrix. Every tensor in the library is rank 2; per-head
/// and per-sequence dimensions are carried as lists of matrices.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using TokenId = std::int32_t;

/// Additive mask value for blocked attention/softmax entries. Finite so the
/// stabilized softmax never computes inf - inf.
template <typename T>
inline constexpr T kMaskNeg = T(-1e9);

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename T>
std::string shape_string(const Matrix<T>& m) {
  return shape_string(m.rows(), m.cols());
}

/// A mutable tensor with a stable name: model parameters, optimizer slots.
template <typename T>
struct NamedTensor {
  std::string name;
  Matrix<T>* value;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t index) : graph_(graph), index_(index) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  const Matrix<T>& value() const { return graph_->value(index_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return graph_->requires_grad(index_); }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t index_ = 0;
};

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape is topologically sorted by construction and backward() is a
/// single reverse sweep.
///
/// A graph built with record_grad=false never stores backward closures; it
/// is the inference mode used by scoring and benchmarks.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix<T>& out_grad)>;

  explicit Graph(bool record_grad = true) : record_grad_(record_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf owning its value.
  Var<T> leaf(Matrix<T> value, bool requires_grad = false);

  /// Leaf viewing external storage (model parameters). The storage must
  /// outlive the graph and must not be modified while the graph is in use.
  Var<T> parameter(const Matrix<T>& storage, bool requires_grad = true);

  /// Appends an op result. `backward` is kept only if some input requires a
  /// gradient and the graph records gradients. Throws NumericError when the
  /// value holds NaN or Inf.
  Var<T> record(const char* op, Matrix<T> value, std::initializer_list<Var<T>> inputs,
                Backward backward);

  const Matrix<T>& value(std::size_t index) const;
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  const char* op_name(std::size_t index) const { return nodes_[index].op; }
  std::size_t size() const { return nodes_.size(); }
  bool records_grad() const { return record_grad_; }

  /// Gradient of the last backward() w.r.t. a node; zeros if the node was
  /// not reached.
  Matrix<T> grad(Var<T> v) const;

  template <typename Derived>
  void accumulate(std::size_t index, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[index];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Reverse sweep from a 1x1 loss. A graph can be swept once.
  void backward(Var<T> loss);

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Matrix<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool record_grad_;
  bool swept_ = false;
};

}  // namespace tta
