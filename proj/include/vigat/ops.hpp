#ifndef VIGAT_OPS_HPP
#define VIGAT_OPS_HPP

// Dense kernels with analytic backward passes.
//
// Backward functions accumulate (+=) into the gradient targets they are given;
// a null target skips that gradient. Callers zero their targets once per pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "vigat/error.hpp"
#include "vigat/random.hpp"
#include "vigat/tensor.hpp"

namespace vigat::ops {

namespace detail {

template <typename T>
void require_vector(const Tensor2<T>& v, std::size_t n, const char* what) {
  if (v.rows() != 1 || v.cols() != n) {
    throw DimensionError(std::string(what) + ": expected (1x" + std::to_string(n) + "), got " +
                         v.shape_string());
  }
}

template <typename T>
void require_target(const Tensor2<T>* g, const Tensor2<T>& like, const char* what) {
  if (g != nullptr && !g->same_shape(like)) {
    throw DimensionError(std::string(what) + ": gradient target " + g->shape_string() +
                         " vs value " + like.shape_string());
  }
}

}  // namespace detail

template <typename T>
Tensor2<T> transpose(const Tensor2<T>& a) {
  Tensor2<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor2<T> matmul(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Tensor2<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

/// a * b^T without materializing the transpose.
template <typename T>
Tensor2<T> matmul_nt(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  Tensor2<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      T s{0};
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

/// a^T * b.
template <typename T>
Tensor2<T> matmul_tn(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + a.shape_string() + "^T x " + b.shape_string());
  }
  Tensor2<T> out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = a(k, i);
      if (aki == T{0}) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

/// out = a b; ga += gout b^T, gb += a^T gout.
template <typename T>
void matmul_backward(const Tensor2<T>& a, const Tensor2<T>& b, const Tensor2<T>& gout,
                     std::type_identity_t<Tensor2<T>>* ga, std::type_identity_t<Tensor2<T>>* gb) {
  if (gout.rows() != a.rows() || gout.cols() != b.cols()) {
    throw DimensionError("matmul_backward: upstream " + gout.shape_string());
  }
  detail::require_target(ga, a, "matmul_backward");
  detail::require_target(gb, b, "matmul_backward");
  if (ga != nullptr) *ga += matmul_nt(gout, b);
  if (gb != nullptr) *gb += matmul_tn(a, gout);
}

// ---------------------------------------------------------------------------
// affine_rows: out[k] = w x[k] + b, i.e. x w^T + b with w shaped (out x in).

template <typename T>
Tensor2<T> affine_rows(const Tensor2<T>& x, const Tensor2<T>& w, const Tensor2<T>& b) {
  if (x.cols() != w.cols()) {
    throw DimensionError("affine_rows: input " + x.shape_string() + " vs weight " +
                         w.shape_string());
  }
  detail::require_vector(b, w.rows(), "affine_rows bias");
  Tensor2<T> out = matmul_nt(x, w);
  for (std::size_t k = 0; k < out.rows(); ++k)
    for (std::size_t j = 0; j < out.cols(); ++j) out(k, j) += b[j];
  return out;
}

template <typename T>
void affine_rows_backward(const Tensor2<T>& x, const Tensor2<T>& w, const Tensor2<T>& gout,
                          std::type_identity_t<Tensor2<T>>* gx, std::type_identity_t<Tensor2<T>>* gw, std::type_identity_t<Tensor2<T>>* gb) {
  if (gout.rows() != x.rows() || gout.cols() != w.rows()) {
    throw DimensionError("affine_rows_backward: upstream " + gout.shape_string());
  }
  detail::require_target(gx, x, "affine_rows_backward");
  detail::require_target(gw, w, "affine_rows_backward");
  if (gx != nullptr) *gx += matmul(gout, w);
  if (gw != nullptr) *gw += matmul_tn(gout, x);
  if (gb != nullptr) {
    detail::require_vector(*gb, w.rows(), "affine_rows_backward bias");
    for (std::size_t k = 0; k < gout.rows(); ++k)
      for (std::size_t j = 0; j < gout.cols(); ++j) (*gb)[j] += gout(k, j);
  }
}

// ---------------------------------------------------------------------------
// row_sq_normalize: a[k,l] = e[k,l]^2 / (sum_i e[k,i]^2 + eps)

template <typename T>
Tensor2<T> row_sq_normalize(const Tensor2<T>& e, T eps) {
  if (e.rows() != e.cols()) throw DimensionError("row_sq_normalize: non-square " + e.shape_string());
  if (!(eps >= T{0})) throw ParameterError("row_sq_normalize: eps must be >= 0");
  Tensor2<T> out(e.rows(), e.cols());
  for (std::size_t k = 0; k < e.rows(); ++k) {
    T denom = eps;
    for (std::size_t i = 0; i < e.cols(); ++i) denom += e(k, i) * e(k, i);
    if (denom == T{0}) continue;
    for (std::size_t l = 0; l < e.cols(); ++l) out(k, l) = e(k, l) * e(k, l) / denom;
  }
  return out;
}

/// ge[k,j] += 2 e[k,j] / d_k * (gout[k,j] - sum_l gout[k,l] a[k,l]).
template <typename T>
void row_sq_normalize_backward(const Tensor2<T>& e, const Tensor2<T>& out, const Tensor2<T>& gout,
                               T eps, Tensor2<T>& ge) {
  e.require_same_shape(gout, "row_sq_normalize_backward");
  e.require_same_shape(ge, "row_sq_normalize_backward");
  for (std::size_t k = 0; k < e.rows(); ++k) {
    T denom = eps;
    for (std::size_t i = 0; i < e.cols(); ++i) denom += e(k, i) * e(k, i);
    if (denom == T{0}) continue;
    T dot{0};
    for (std::size_t l = 0; l < e.cols(); ++l) dot += gout(k, l) * out(k, l);
    for (std::size_t j = 0; j < e.cols(); ++j) {
      ge(k, j) += T{2} * e(k, j) / denom * (gout(k, j) - dot);
    }
  }
}

// ---------------------------------------------------------------------------
// layernorm_rows

template <typename T>
Tensor2<T> layernorm_rows(const Tensor2<T>& x, const Tensor2<T>& gain, const Tensor2<T>& bias,
                          T eps) {
  detail::require_vector(gain, x.cols(), "layernorm_rows gain");
  detail::require_vector(bias, x.cols(), "layernorm_rows bias");
  const std::size_t f = x.cols();
  Tensor2<T> out(x.rows(), f);
  for (std::size_t k = 0; k < x.rows(); ++k) {
    T mean{0};
    for (std::size_t j = 0; j < f; ++j) mean += x(k, j);
    mean /= static_cast<T>(f);
    T var{0};
    for (std::size_t j = 0; j < f; ++j) var += (x(k, j) - mean) * (x(k, j) - mean);
    var /= static_cast<T>(f);
    const T denom = std::sqrt(var + eps);
    for (std::size_t j = 0; j < f; ++j) {
      const T xhat = denom > T{0} ? (x(k, j) - mean) / denom : T{0};
      out(k, j) = gain[j] * xhat + bias[j];
    }
  }
  return out;
}

template <typename T>
void layernorm_rows_backward(const Tensor2<T>& x, const Tensor2<T>& gain, T eps,
                             const Tensor2<T>& gout, std::type_identity_t<Tensor2<T>>* gx, std::type_identity_t<Tensor2<T>>* ggain,
                             std::type_identity_t<Tensor2<T>>* gbias) {
  x.require_same_shape(gout, "layernorm_rows_backward");
  detail::require_target(gx, x, "layernorm_rows_backward");
  const std::size_t f = x.cols();
  std::vector<T> xhat(f), gxhat(f);
  for (std::size_t k = 0; k < x.rows(); ++k) {
    T mean{0};
    for (std::size_t j = 0; j < f; ++j) mean += x(k, j);
    mean /= static_cast<T>(f);
    T var{0};
    for (std::size_t j = 0; j < f; ++j) var += (x(k, j) - mean) * (x(k, j) - mean);
    var /= static_cast<T>(f);
    const T denom = std::sqrt(var + eps);
    if (denom == T{0}) continue;
    const T rstd = T{1} / denom;
    T mean_g{0}, mean_gx{0};
    for (std::size_t j = 0; j < f; ++j) {
      xhat[j] = (x(k, j) - mean) * rstd;
      gxhat[j] = gout(k, j) * gain[j];
      mean_g += gxhat[j];
      mean_gx += gxhat[j] * xhat[j];
      if (ggain != nullptr) (*ggain)[j] += gout(k, j) * xhat[j];
      if (gbias != nullptr) (*gbias)[j] += gout(k, j);
    }
    mean_g /= static_cast<T>(f);
    mean_gx /= static_cast<T>(f);
    if (gx != nullptr) {
      for (std::size_t j = 0; j < f; ++j) {
        (*gx)(k, j) += rstd * (gxhat[j] - mean_g - xhat[j] * mean_gx);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise / row-wise

template <typename T>
Tensor2<T> relu(const Tensor2<T>& x) {
  Tensor2<T> out = x;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// x is the relu input.
template <typename T>
void relu_backward(const Tensor2<T>& x, const Tensor2<T>& gout, Tensor2<T>& gx) {
  x.require_same_shape(gout, "relu_backward");
  x.require_same_shape(gx, "relu_backward");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > T{0}) gx[i] += gout[i];
}

template <typename T>
Tensor2<T> sigmoid(const Tensor2<T>& x) {
  Tensor2<T> out = x;
  for (auto& v : out.values()) {
    v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
  return out;
}

/// y is the sigmoid output.
template <typename T>
void sigmoid_backward(const Tensor2<T>& y, const Tensor2<T>& gout, Tensor2<T>& gx) {
  y.require_same_shape(gout, "sigmoid_backward");
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gout[i] * y[i] * (T{1} - y[i]);
}

template <typename T>
Tensor2<T> softmax_row(const Tensor2<T>& x) {
  Tensor2<T> out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(r, j) = std::exp(x(r, j) - mx);
      sum += out(r, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) /= sum;
  }
  return out;
}

/// y is the softmax output.
template <typename T>
void softmax_row_backward(const Tensor2<T>& y, const Tensor2<T>& gout, Tensor2<T>& gx) {
  y.require_same_shape(gout, "softmax_row_backward");
  for (std::size_t r = 0; r < y.rows(); ++r) {
    T dot{0};
    for (std::size_t j = 0; j < y.cols(); ++j) dot += gout(r, j) * y(r, j);
    for (std::size_t j = 0; j < y.cols(); ++j) gx(r, j) += y(r, j) * (gout(r, j) - dot);
  }
}

/// Column-wise mean over rows; returns 1 x cols.
template <typename T>
Tensor2<T> mean_rows(const Tensor2<T>& x) {
  if (x.rows() == 0) throw DimensionError("mean_rows: empty input");
  Tensor2<T> out(1, x.cols());
  for (std::size_t k = 0; k < x.rows(); ++k)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(k, j);
  for (auto& v : out.values()) v /= static_cast<T>(x.rows());
  return out;
}

template <typename T>
void mean_rows_backward(const Tensor2<T>& gout, Tensor2<T>& gx) {
  detail::require_vector(gout, gx.cols(), "mean_rows_backward");
  const T scale = T{1} / static_cast<T>(gx.rows());
  for (std::size_t k = 0; k < gx.rows(); ++k)
    for (std::size_t j = 0; j < gx.cols(); ++j) gx(k, j) += gout[j] * scale;
}

/// Horizontal concatenation [a, b].
template <typename T>
Tensor2<T> concat(const Tensor2<T>& a, const Tensor2<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor2<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols());
  }
  return out;
}

/// Splits the upstream of concat(a, b) back into its two halves.
template <typename T>
void concat_backward(const Tensor2<T>& gout, Tensor2<T>& ga, Tensor2<T>& gb) {
  if (gout.rows() != ga.rows() || gout.cols() != ga.cols() + gb.cols()) {
    throw DimensionError("concat_backward: upstream " + gout.shape_string());
  }
  for (std::size_t r = 0; r < gout.rows(); ++r) {
    for (std::size_t j = 0; j < ga.cols(); ++j) ga(r, j) += gout(r, j);
    for (std::size_t j = 0; j < gb.cols(); ++j) gb(r, j) += gout(r, ga.cols() + j);
  }
}

template <typename T>
struct DropoutResult {
  Tensor2<T> output;
  /// Per-element multiplier: 0 for dropped, 1/(1-rate) for kept, 1 when inactive.
  Tensor2<T> mask;
};

/// Inverted dropout. Identity when `train` is false.
template <typename T>
DropoutResult<T> dropout(const Tensor2<T>& x, double rate, bool train, CounterStream& stream) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult<T> r{x, Tensor2<T>(x.rows(), x.cols(), T{1})};
  if (!train || rate == 0.0) return r;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mask[i] = stream.uniform() < rate ? T{0} : keep_scale;
    r.output[i] = x[i] * r.mask[i];
  }
  return r;
}

template <typename T>
void dropout_backward(const Tensor2<T>& mask, const Tensor2<T>& gout, Tensor2<T>& gx) {
  mask.require_same_shape(gout, "dropout_backward");
  for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += gout[i] * mask[i];
}

}  // namespace vigat::ops

#endif  // VIGAT_OPS_HPP
