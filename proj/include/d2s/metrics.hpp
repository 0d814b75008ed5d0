#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2s/tensor.hpp"

namespace d2s {

struct MetricsReport {
  double srcc = 0.0;
  double pcc = 0.0;
  double rmse = 0.0;
  double rmae = 0.0;
  std::size_t n = 0;
};

namespace detail {

inline void require_equal_lengths(std::span<const double> a, std::span<const double> b,
                                  std::size_t min_len) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("length mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  if (a.size() < min_len) {
    throw std::invalid_argument("need at least " + std::to_string(min_len) + " samples");
  }
}

}  // namespace detail

inline double pcc(std::span<const double> y, std::span<const double> y_hat) {
  detail::require_equal_lengths(y, y_hat, 2);
  const auto n = static_cast<double>(y.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mean_a += y[i];
    mean_b += y_hat[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double da = y[i] - mean_a;
    const double db = y_hat[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) throw std::invalid_argument("zero variance");
  return cov / std::sqrt(var_a * var_b);
}

// Average ranks (1-based, ties share the mean of their positions).
inline Vector average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

inline double srcc(std::span<const double> y, std::span<const double> y_hat) {
  detail::require_equal_lengths(y, y_hat, 2);
  const Vector ra = average_ranks(y);
  const Vector rb = average_ranks(y_hat);
  try {
    return pcc(ra, rb);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("zero rank variance");
  }
}

inline double rmse(std::span<const double> y, std::span<const double> y_hat) {
  detail::require_equal_lengths(y, y_hat, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - y_hat[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(y.size()));
}

// Root of the mean absolute error.
inline double rmae(std::span<const double> y, std::span<const double> y_hat) {
  detail::require_equal_lengths(y, y_hat, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline MetricsReport compute_metrics(std::span<const double> y, std::span<const double> y_hat) {
  return {srcc(y, y_hat), pcc(y, y_hat), rmse(y, y_hat), rmae(y, y_hat), y.size()};
}

// Field names are part of the reporting contract; keep them stable.
inline std::string metrics_csv_header() { return "srcc,pcc,rmse,rmae,n"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << r.srcc << ',' << r.pcc << ',' << r.rmse << ',' << r.rmae << ',' << r.n;
  return out.str();
}

inline std::string metrics_text(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << "srcc " << r.srcc << "\npcc " << r.pcc << "\nrmse " << r.rmse << "\nrmae " << r.rmae
      << "\nn " << r.n << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Effective dimension: smallest k whose top-k principal components explain
// the requested variance fraction. Eigenvalues via cyclic Jacobi sweeps
// (features are no wider than a few dozen columns here).
// ---------------------------------------------------------------------------

inline Vector symmetric_eigenvalues(Tensor2D a) {
  const std::size_t d = a.rows();
  if (a.cols() != d) throw std::invalid_argument("matrix must be square");
  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vector eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

inline std::size_t effective_dim(const std::vector<Vector>& features, double variance_threshold) {
  if (features.size() < 2) throw std::invalid_argument("need at least 2 feature rows");
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0)) {
    throw std::invalid_argument("variance threshold must be in (0,1]");
  }
  const std::size_t n = features.size();
  const std::size_t d = features.front().size();
  Vector mean(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw std::invalid_argument("ragged feature rows");
    axpy(1.0, f, mean);
  }
  for (double& m : mean) m /= static_cast<double>(n);

  Tensor2D cov(d, d);
  for (const auto& f : features) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = f[i] - mean[i];
      for (std::size_t j = i; j < d; ++j) {
        cov(i, j) += di * (f[j] - mean[j]);
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) *= scale;
      cov(j, i) = cov(i, j);
    }
  }

  Vector eig = symmetric_eigenvalues(cov);
  for (double& e : eig) e = std::max(e, 0.0);
  double total = 0.0;
  for (double e : eig) total += e;
  if (total <= 0.0) return 0;  // degenerate cloud: no variance at all

  double cum = 0.0;
  for (std::size_t k = 0; k < eig.size(); ++k) {
    cum += eig[k];
    if (cum + 1e-12 * total >= variance_threshold * total) return k + 1;
  }
  return eig.size();
}

// Capacity bound B sqrt(d_eff) / sqrt(n).
inline double rademacher_bound(double feature_norm_bound, std::size_t d_eff, std::size_t n) {
  if (feature_norm_bound < 0.0) throw std::invalid_argument("norm bound must be non-negative");
  if (n == 0) throw std::invalid_argument("sample count must be positive");
  return feature_norm_bound * std::sqrt(static_cast<double>(d_eff)) /
         std::sqrt(static_cast<double>(n));
}

struct RademacherEstimate {
  double feature_norm_bound = 0.0;  // B: max feature L2 norm
  std::size_t d_eff = 0;
  std::size_t n = 0;
  double bound = 0.0;
};

inline RademacherEstimate rademacher_estimate(const std::vector<Vector>& features,
                                              double variance_threshold) {
  RademacherEstimate est;
  est.n = features.size();
  for (const auto& f : features) est.feature_norm_bound = std::max(est.feature_norm_bound, norm(f));
  est.d_eff = effective_dim(features, variance_threshold);
  est.bound = rademacher_bound(est.feature_norm_bound, est.d_eff, est.n);
  return est;
}

}  // namespace d2s
