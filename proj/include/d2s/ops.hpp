#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "d2s/tensor.hpp"

namespace d2s {

// Probability simplex from raw scores; max-subtracted so arbitrarily large
// inputs cannot overflow.
inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("empty vector");
  if (!all_finite(v)) throw NumericalError("non-finite input");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

inline Vector l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) throw NumericalError("non-finite input");
  const double n = norm(v);
  if (!std::isfinite(n)) throw NumericalError("non-finite norm");  // |v|^2 overflowed
  if (!(n > 0.0)) throw std::invalid_argument("zero-norm vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// y = W x + b. Pass an empty bias for a pure linear map.
inline Vector linear_apply(std::span<const double> x, const Tensor2D& w,
                           std::span<const double> b) {
  if (x.size() != w.cols() || (!b.empty() && b.size() != w.rows())) {
    throw std::invalid_argument("shape mismatch: W is " + w.shape_str() + ", x has length " +
                                std::to_string(x.size()) + ", b has length " +
                                std::to_string(b.size()));
  }
  Vector y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = b.empty() ? 0.0 : b[r];
    const double* row = w.data().data() + r * w.cols();
    for (std::size_t c = 0; c < w.cols(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

inline Vector linear_apply(std::span<const double> x, const Tensor2D& w) {
  return linear_apply(x, w, {});
}

// Accumulates dL/dW, dL/db and dL/dx from dL/dy. Gradient buffers must be
// pre-shaped; dx may be empty when the input gradient is not needed.
inline void linear_backward_acc(std::span<const double> x, const Tensor2D& w,
                                std::span<const double> dy, Tensor2D& dw, std::span<double> db,
                                std::span<double> dx) {
  if (x.size() != w.cols() || dy.size() != w.rows()) {
    throw std::invalid_argument("shape mismatch: W is " + w.shape_str() + ", x has length " +
                                std::to_string(x.size()) + ", dy has length " +
                                std::to_string(dy.size()));
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double g = dy[r];
    double* dwr = dw.data().data() + r * w.cols();
    for (std::size_t c = 0; c < w.cols(); ++c) dwr[c] += g * x[c];
    if (!db.empty()) db[r] += g;
  }
  if (!dx.empty()) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < w.rows(); ++r) s += w(r, c) * dy[r];
      dx[c] += s;
    }
  }
}

}  // namespace d2s
