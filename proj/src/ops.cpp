#include "tta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tta {
namespace {

template <typename T>
void require_same_shape(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

template <typename T>
void require_row_vector(const char* op, const Matrix<T>& x, const Matrix<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(x.cols()) +
                         " row vector, got " + shape_string(row) + " for input " +
                         shape_string(x));
  }
}

template <typename T>
bool is_masked(T mask_value) {
  return mask_value <= kMaskNeg<T> / 2;
}

// Softmax backward: given weights S and upstream dS, returns dLogits.
template <typename T>
Matrix<T> softmax_backward(const Matrix<T>& weights, const Matrix<T>& grad_weights) {
  Vector<T> dot = (grad_weights.array() * weights.array()).rowwise().sum();
  return (weights.array() * (grad_weights.colwise() - dot).array()).matrix();
}

bool contains(std::span<const TokenId> set, TokenId id) {
  return std::find(set.begin(), set.end(), id) != set.end();
}

}  // namespace

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits, const Matrix<T>& additive_mask) {
  require_same_shape("softmax_masked", logits, additive_mask);
  Matrix<T> out = Matrix<T>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    bool any = false;
    T max_value = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (is_masked(additive_mask(r, c))) continue;
      T z = logits(r, c) + additive_mask(r, c);
      if (!any || z > max_value) max_value = z;
      any = true;
    }
    if (!any) {
      throw DegenerateRowError("softmax_masked: row " + std::to_string(r) +
                               " has every entry masked");
    }
    T total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (is_masked(additive_mask(r, c))) continue;
      T e = std::exp(logits(r, c) + additive_mask(r, c) - max_value);
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  return out;
}

template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    T max_value = logits.row(r).maxCoeff();
    T log_total = std::log((logits.row(r).array() - max_value).exp().sum());
    out.row(r) = logits.row(r).array() - max_value - log_total;
  }
  return out;
}

template <typename T>
T gelu_value(T x) {
  const T c = std::sqrt(T(2) / T(M_PI));
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Matrix<T>& av = a.value();
  const Matrix<T>& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(av) + " * " +
                         shape_string(bv));
  }
  Matrix<T> out = av * bv;
  return a.graph().record("matmul", std::move(out), {a, b},
                          [a, b](Graph<T>& g, const Matrix<T>& dout) {
                            if (a.requires_grad()) g.accumulate(a.index(), dout * b.value().transpose());
                            if (b.requires_grad()) g.accumulate(b.index(), a.value().transpose() * dout);
                          });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const Matrix<T>& av = a.value();
  const Matrix<T>& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_string(av) + " * " +
                         shape_string(bv) + "^T");
  }
  Matrix<T> out = av * bv.transpose();
  return a.graph().record("matmul_nt", std::move(out), {a, b},
                          [a, b](Graph<T>& g, const Matrix<T>& dout) {
                            if (a.requires_grad()) g.accumulate(a.index(), dout * b.value());
                            if (b.requires_grad()) g.accumulate(b.index(), dout.transpose() * a.value());
                          });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a.value(), b.value());
  Matrix<T> out = a.value() + b.value();
  return a.graph().record("add", std::move(out), {a, b},
                          [a, b](Graph<T>& g, const Matrix<T>& dout) {
                            g.accumulate(a.index(), dout);
                            g.accumulate(b.index(), dout);
                          });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  require_row_vector("add_row", x.value(), bias.value());
  Matrix<T> out = x.value().rowwise() + bias.value().row(0);
  return x.graph().record("add_row", std::move(out), {x, bias},
                          [x, bias](Graph<T>& g, const Matrix<T>& dout) {
                            g.accumulate(x.index(), dout);
                            if (bias.requires_grad()) g.accumulate(bias.index(), dout.colwise().sum());
                          });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a.value(), b.value());
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return a.graph().record("mul", std::move(out), {a, b},
                          [a, b](Graph<T>& g, const Matrix<T>& dout) {
                            if (a.requires_grad()) g.accumulate(a.index(), dout.cwiseProduct(b.value()));
                            if (b.requires_grad()) g.accumulate(b.index(), dout.cwiseProduct(a.value()));
                          });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Matrix<T> out = x.value() * factor;
  return x.graph().record("scale", std::move(out), {x},
                          [x, factor](Graph<T>& g, const Matrix<T>& dout) {
                            g.accumulate(x.index(), dout * factor);
                          });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Matrix<T> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.graph().record("sum", std::move(out), {x}, [x](Graph<T>& g, const Matrix<T>& dout) {
    g.accumulate(x.index(), Matrix<T>::Constant(x.rows(), x.cols(), dout(0, 0)));
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Matrix<T> out = x.value().unaryExpr([](T v) { return gelu_value(v); });
  return x.graph().record("gelu", std::move(out), {x}, [x](Graph<T>& g, const Matrix<T>& dout) {
    const T c = std::sqrt(T(2) / T(M_PI));
    Matrix<T> d = x.value().unaryExpr([c](T v) {
      T t = std::tanh(c * (v + T(0.044715) * v * v * v));
      return T(0.5) * (T(1) + t) +
             T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * v * v);
    });
    g.accumulate(x.index(), dout.cwiseProduct(d));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Matrix<T>& xv = x.value();
  require_row_vector("layer_norm", xv, gain.value());
  require_row_vector("layer_norm", xv, bias.value());
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const auto cols = static_cast<T>(xv.cols());
  Vector<T> mean = xv.rowwise().sum() / cols;
  Matrix<T> centered = xv.colwise() - mean;
  Vector<T> var = centered.array().square().rowwise().sum() / cols;
  Vector<T> inv_std = (var.array() + eps).rsqrt();
  Matrix<T> normalized = centered.array().colwise() * inv_std.array();
  Matrix<T> out =
      (normalized.array().rowwise() * gain.value().row(0).array()).rowwise() +
      bias.value().row(0).array();
  return x.graph().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Graph<T>& g, const Matrix<T>& dout) {
        if (gain.requires_grad()) g.accumulate(gain.index(), dout.cwiseProduct(normalized).colwise().sum());
        if (bias.requires_grad()) g.accumulate(bias.index(), dout.colwise().sum());
        if (!x.requires_grad()) return;
        const auto n = static_cast<T>(normalized.cols());
        Matrix<T> dxhat = dout.array().rowwise() * gain.value().row(0).array();
        Vector<T> mean_d = dxhat.rowwise().sum() / n;
        Vector<T> mean_dx = dxhat.cwiseProduct(normalized).rowwise().sum() / n;
        Matrix<T> dx = ((dxhat.colwise() - mean_d).array() -
                        normalized.array().colwise() * mean_dx.array())
                           .colwise() *
                       inv_std.array();
        g.accumulate(x.index(), dx);
      });
}

template <typename T>
Var<T> softmax_masked(Var<T> logits, const Matrix<T>& additive_mask) {
  Matrix<T> weights = softmax_rows(logits.value(), additive_mask);
  Matrix<T> out = weights;
  return logits.graph().record(
      "softmax_masked", std::move(out), {logits},
      [logits, weights = std::move(weights)](Graph<T>& g, const Matrix<T>& dout) {
        g.accumulate(logits.index(), softmax_backward(weights, dout));
      });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const TokenId> ids) {
  const Matrix<T>& tv = table.value();
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " +
                           shape_string(tv));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return table.graph().record(
      "gather_rows", std::move(out), {table},
      [table, saved = std::move(saved)](Graph<T>& g, const Matrix<T>& dout) {
        Matrix<T> dt = Matrix<T>::Zero(table.rows(), table.cols());
        for (std::size_t i = 0; i < saved.size(); ++i) {
          dt.row(saved[i]) += dout.row(static_cast<Eigen::Index>(i));
        }
        g.accumulate(table.index(), dt);
      });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column counts differ, " + shape_string(a.value()) +
                         " and " + shape_string(b.value()));
  }
  Matrix<T> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  return a.graph().record("concat_rows", std::move(out), {a, b},
                          [a, b](Graph<T>& g, const Matrix<T>& dout) {
                            if (a.requires_grad()) g.accumulate(a.index(), dout.topRows(a.rows()));
                            if (b.requires_grad()) g.accumulate(b.index(), dout.bottomRows(b.rows()));
                          });
}

template <typename T>
Var<T> dropout(Var<T> x, T rate, Rng& rng) {
  if (rate == T(0)) return x;
  if (!(rate > 0 && rate < 1)) throw ContractError("dropout: rate must lie in [0,1)");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T factor = T(1) / (T(1) - rate);
  Matrix<T> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? factor : T(0);
  Matrix<T> out = x.value().cwiseProduct(mask);
  return x.graph().record("dropout", std::move(out), {x},
                          [x, mask = std::move(mask)](Graph<T>& g, const Matrix<T>& dout) {
                            g.accumulate(x.index(), dout.cwiseProduct(mask));
                          });
}

template <typename T>
NllSum<T> nll_sum(Var<T> logits, std::span<const TokenId> targets,
                  std::span<const TokenId> ignore) {
  const Matrix<T>& lv = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(lv));
  }
  Matrix<T> log_probs = log_softmax_rows(lv);
  std::vector<Eigen::Index> counted;
  T total = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (contains(ignore, targets[r])) continue;
    if (targets[r] < 0 || targets[r] >= lv.cols()) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[r]) +
                           " outside vocabulary of " + std::to_string(lv.cols()));
    }
    counted.push_back(static_cast<Eigen::Index>(r));
    total -= log_probs(static_cast<Eigen::Index>(r), targets[r]);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  std::vector<TokenId> saved(targets.begin(), targets.end());
  const int count = static_cast<int>(counted.size());
  Var<T> result = logits.graph().record(
      "cross_entropy", std::move(out), {logits},
      [logits, log_probs = std::move(log_probs), counted = std::move(counted),
       saved = std::move(saved)](Graph<T>& g, const Matrix<T>& dout) {
        Matrix<T> d = Matrix<T>::Zero(logits.rows(), logits.cols());
        for (Eigen::Index r : counted) {
          d.row(r) = log_probs.row(r).array().exp() * dout(0, 0);
          d(r, saved[static_cast<std::size_t>(r)]) -= dout(0, 0);
        }
        g.accumulate(logits.index(), d);
      });
  return {result, count};
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const TokenId> targets,
                     std::span<const TokenId> ignore) {
  NllSum<T> s = nll_sum(logits, targets, ignore);
  if (s.count == 0) throw ContractError("cross_entropy: every position is ignored");
  return scale(s.total, T(1) / static_cast<T>(s.count));
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const Matrix<T>& additive_mask,
                 const AttentionOptions<T>& options) {
  const Matrix<T>& qv = q.value();
  const Matrix<T>& kv = k.value();
  const Matrix<T>& vv = v.value();
  const int heads = options.heads;
  if (heads <= 0 || qv.cols() % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(qv.cols()) +
                         " not divisible into " + std::to_string(heads) + " heads");
  }
  if (kv.cols() != qv.cols() || vv.cols() != qv.cols() || kv.rows() != vv.rows()) {
    throw DimensionError("attention: q " + shape_string(qv) + ", k " + shape_string(kv) +
                         ", v " + shape_string(vv) + " are inconsistent");
  }
  if (additive_mask.rows() != qv.rows() || additive_mask.cols() != kv.rows()) {
    throw DimensionError("attention: mask " + shape_string(additive_mask) + " for scores " +
                         shape_string(qv.rows(), kv.rows()));
  }
  const bool use_dropout = options.dropout > T(0);
  if (use_dropout && options.rng == nullptr) throw ContractError("attention: dropout needs an rng");

  const Eigen::Index width = qv.cols() / heads;
  const T score_scale = T(1) / std::sqrt(static_cast<T>(width));
  std::vector<Matrix<T>> weights(static_cast<std::size_t>(heads));
  std::vector<Matrix<T>> drop_masks;
  Matrix<T> out(qv.rows(), qv.cols());
  const T keep_scale = use_dropout ? T(1) / (T(1) - options.dropout) : T(1);
  std::bernoulli_distribution keep(1.0 - static_cast<double>(options.dropout));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * width;
    Matrix<T> scores = (qv.middleCols(c0, width) * kv.middleCols(c0, width).transpose()) * score_scale;
    Matrix<T>& s = weights[static_cast<std::size_t>(h)];
    s = softmax_rows(scores, additive_mask);
    if (use_dropout) {
      Matrix<T> m(s.rows(), s.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*options.rng) ? keep_scale : T(0);
      out.middleCols(c0, width) = s.cwiseProduct(m) * vv.middleCols(c0, width);
      drop_masks.push_back(std::move(m));
    } else {
      out.middleCols(c0, width) = s * vv.middleCols(c0, width);
    }
  }
  if (options.weights != nullptr) *options.weights = weights;

  return q.graph().record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, heads, width, score_scale, weights = std::move(weights),
       drop_masks = std::move(drop_masks)](Graph<T>& g, const Matrix<T>& dout) {
        const Matrix<T>& qv = q.value();
        const Matrix<T>& kv = k.value();
        const Matrix<T>& vv = v.value();
        Matrix<T> dq(qv.rows(), qv.cols());
        Matrix<T> dk(kv.rows(), kv.cols());
        Matrix<T> dv(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Eigen::Index c0 = h * width;
          const Matrix<T>& s = weights[static_cast<std::size_t>(h)];
          Matrix<T> d_out = dout.middleCols(c0, width);
          Matrix<T> d_weights = d_out * vv.middleCols(c0, width).transpose();
          if (!drop_masks.empty()) {
            const Matrix<T>& m = drop_masks[static_cast<std::size_t>(h)];
            dv.middleCols(c0, width) = s.cwiseProduct(m).transpose() * d_out;
            d_weights = d_weights.cwiseProduct(m);
          } else {
            dv.middleCols(c0, width) = s.transpose() * d_out;
          }
          Matrix<T> d_scores = softmax_backward(s, d_weights) * score_scale;
          dq.middleCols(c0, width) = d_scores * kv.middleCols(c0, width);
          dk.middleCols(c0, width) = d_scores.transpose() * qv.middleCols(c0, width);
        }
        g.accumulate(q.index(), dq);
        g.accumulate(k.index(), dk);
        g.accumulate(v.index(), dv);
      });
}

#define TTA_INSTANTIATE_OPS(T)                                                              \
  template Matrix<T> softmax_rows(const Matrix<T>&, const Matrix<T>&);                      \
  template Matrix<T> log_softmax_rows(const Matrix<T>&);                                    \
  template T gelu_value(T);                                                                 \
  template Var<T> matmul(Var<T>, Var<T>);                                                   \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                \
  template Var<T> add(Var<T>, Var<T>);                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                      \
  template Var<T> scale(Var<T>, T);                                                         \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> gelu(Var<T>);                                                             \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                    \
  template Var<T> softmax_masked(Var<T>, const Matrix<T>&);                                 \
  template Var<T> gather_rows(Var<T>, std::span<const TokenId>);                            \
  template Var<T> concat_rows(Var<T>, Var<T>);                                              \
  template Var<T> dropout(Var<T>, T, Rng&);                                                 \
  template NllSum<T> nll_sum(Var<T>, std::span<const TokenId>, std::span<const TokenId>);   \
  template Var<T> cross_entropy(Var<T>, std::span<const TokenId>, std::span<const TokenId>); \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const Matrix<T>&, const AttentionOptions<T>&);

TTA_INSTANTIATE_OPS(float)
TTA_INSTANTIATE_OPS(double)

}  // namespace tta
