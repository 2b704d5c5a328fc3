#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0;
  double max_absolute_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0;
};

/// Builds a scalar loss from leaves bound to the checked tensors, in the
/// order they were given.
template <typename T>
using LossBuilder = std::function<Var<T>(Graph<T>&, std::span<const Var<T>>)>;

/// Compares reverse-mode gradients against central differences with the
/// given step, element by element. The relative error of one element is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Tensors are
/// restored before returning. NumericError from the builder propagates
/// with the offending op's name.
template <typename T>
GradCheckReport grad_check(const LossBuilder<T>& build, std::span<const NamedTensor<T>> tensors,
                           T step);

}  // namespace tta
