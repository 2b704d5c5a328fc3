#include "tta/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace tta {
namespace {

template <typename T>
T evaluate(const LossBuilder<T>& build, std::span<const NamedTensor<T>> tensors) {
  Graph<T> graph(false);
  std::vector<Var<T>> leaves;
  leaves.reserve(tensors.size());
  for (const auto& t : tensors) leaves.push_back(graph.parameter(*t.value, false));
  Var<T> loss = build(graph, leaves);
  if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("grad_check: loss is not scalar");
  return loss.value()(0, 0);
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const LossBuilder<T>& build, std::span<const NamedTensor<T>> tensors,
                           T step) {
  std::vector<Matrix<T>> analytic;
  {
    Graph<T> graph(true);
    std::vector<Var<T>> leaves;
    for (const auto& t : tensors) leaves.push_back(graph.parameter(*t.value, true));
    Var<T> loss = build(graph, leaves);
    graph.backward(loss);
    for (const Var<T>& leaf : leaves) analytic.push_back(graph.grad(leaf));
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    Matrix<T>& m = *tensors[p].value;
    GradCheckEntry entry{tensors[p].name, 0, 0};
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const T original = m.data()[i];
      m.data()[i] = original + step;
      const T plus = evaluate(build, tensors);
      m.data()[i] = original - step;
      const T minus = evaluate(build, tensors);
      m.data()[i] = original;
      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) /
                             (2.0 * static_cast<double>(step));
      const double exact = static_cast<double>(analytic[p].data()[i]);
      const double abs_err = std::abs(exact - numeric);
      const double rel_err = abs_err / std::max({std::abs(exact), std::abs(numeric), 1e-8});
      entry.max_absolute_error = std::max(entry.max_absolute_error, abs_err);
      entry.max_relative_error = std::max(entry.max_relative_error, rel_err);
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport grad_check(const LossBuilder<float>&, std::span<const NamedTensor<float>>,
                                    float);
template GradCheckReport grad_check(const LossBuilder<double>&,
                                    std::span<const NamedTensor<double>>, double);

}  // namespace tta
