#pragma once

#include <span>
#include <vector>

#include "tta/random.hpp"
#include "tta/tensor.hpp"

namespace tta {

// ---------------------------------------------------------------------------
// Plain kernels, no autodiff.
// ---------------------------------------------------------------------------

/// Row-wise softmax of logits + additive_mask. Entries whose mask is at or
/// below kMaskNeg/2 get weight exactly 0 and do not take part in the row max.
/// Throws DegenerateRowError when a row has no unmasked entry.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits, const Matrix<T>& additive_mask);

template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
T gelu_value(T x);

// ---------------------------------------------------------------------------
// Recorded ops. Every op checks shapes and throws DimensionError naming both
// operands on mismatch.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// a * b^T without materializing the transpose.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// x + bias broadcast over rows; bias is 1 x cols.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias);

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

/// Sum of all entries, 1x1.
template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> gelu(Var<T> x);

/// Per-row normalization to zero mean and unit population variance, then
/// gain/bias (both 1 x cols).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);

/// Differentiable softmax_rows; the mask is a constant of the same shape.
template <typename T>
Var<T> softmax_masked(Var<T> logits, const Matrix<T>& additive_mask);

/// Rows of `table` at `ids`; the backward pass scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const TokenId> ids);

/// Stack a and b vertically.
template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b);

/// Inverted dropout. rate == 0 returns x unchanged.
template <typename T>
Var<T> dropout(Var<T> x, T rate, Rng& rng);

template <typename T>
struct NllSum {
  Var<T> total;  ///< 1x1 sum of -log p(target) over counted rows
  int count = 0;
};

/// Summed negative log-softmax of targets; rows whose target is listed in
/// `ignore` contribute nothing.
template <typename T>
NllSum<T> nll_sum(Var<T> logits, std::span<const TokenId> targets,
                  std::span<const TokenId> ignore = {});

/// Mean of nll_sum over counted rows. Throws ContractError when every row is
/// ignored.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets,
                     std::span<const TokenId> ignore = {});

template <typename T>
struct AttentionOptions {
  int heads = 1;
  T dropout = 0;
  Rng* rng = nullptr;
  /// When set, receives the post-softmax (pre-dropout) weights, one n_q x n_k
  /// matrix per head.
  std::vector<Matrix<T>>* weights = nullptr;
};

/// Multi-head scaled dot-product attention over already projected q, k, v.
/// Heads are contiguous column blocks of width cols/heads and use scale
/// 1/sqrt(cols/heads). The additive mask (n_q x n_k) is shared by all heads.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const Matrix<T>& additive_mask,
                 const AttentionOptions<T>& options);

}  // namespace tta
