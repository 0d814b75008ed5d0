#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/ops.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

struct AlignmentConfig {
  std::size_t buffer_capacity = 2048;  // M
  double momentum = 0.995;             // m
  std::size_t refresh_step = 50;       // r; floor(M/r) entries refreshed per iteration
  double temperature = 0.07;           // tau
  double lambda = 5.0;                 // entropy-alignment weight
  double gamma = 0.01;                 // feature-alignment weight
  double alpha = 1.0;                  // fused-entropy visual weight
  double beta = 1.0;                   // fused-entropy text weight

  void validate() const {
    if (buffer_capacity < 2) throw ConfigError("buffer capacity must be >= 2");
    if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in (0,1)");
    if (refresh_step < 1) throw ConfigError("refresh step must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (lambda < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be non-negative");
    if (!(alpha > 0.0) || beta < 0.0) throw ConfigError("fusion weights: alpha > 0, beta >= 0");
  }
};

// ---------------------------------------------------------------------------
// Feature entropy: Shannon entropy of softmax(z). Bounded by log(dim z).
// ---------------------------------------------------------------------------

inline double feature_entropy(std::span<const double> z) {
  const Vector p = softmax(z);
  double h = 0.0;
  for (double pk : p) {
    if (pk > 0.0) h -= pk * std::log(pk);  // p log p -> 0 as p -> 0
  }
  return h;
}

// dH/dz_k = -p_k (log p_k + H)
inline Vector feature_entropy_grad(std::span<const double> z) {
  const Vector p = softmax(z);
  double h = 0.0;
  for (double pk : p) {
    if (pk > 0.0) h -= pk * std::log(pk);
  }
  Vector grad(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    grad[k] = p[k] > 0.0 ? -p[k] * (std::log(p[k]) + h) : 0.0;
  }
  return grad;
}

inline double fused_entropy(double h_visual, double h_text, double alpha, double beta) {
  if (h_visual < 0.0 || h_text < 0.0) throw std::invalid_argument("entropy must be non-negative");
  if (!(alpha > 0.0) || beta < 0.0) {
    throw std::invalid_argument("fusion weights: alpha > 0, beta >= 0");
  }
  return alpha * h_visual + beta * h_text;
}

// ---------------------------------------------------------------------------
// Entropy buffer: bounded FIFO of per-sample entropies for one modality.
// ---------------------------------------------------------------------------

struct BufferEntry {
  std::uint64_t sample_id = 0;
  double entropy = 0.0;
  std::uint64_t insertion_index = 0;

  friend bool operator==(const BufferEntry&, const BufferEntry&) = default;
};

class EntropyBuffer {
 public:
  explicit EntropyBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) throw ConfigError("buffer capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  const std::deque<BufferEntry>& entries() const { return entries_; }
  std::uint64_t next_insertion_index() const { return next_index_; }

  // Appends in order; evicts exactly the overflow count of oldest entries
  // and returns them.
  std::vector<BufferEntry> push(std::span<const std::pair<std::uint64_t, double>> batch) {
    for (const auto& [id, h] : batch) {
      if (!std::isfinite(h) || h < 0.0) {
        throw std::invalid_argument("buffer entry for sample " + std::to_string(id) +
                                    " has invalid entropy " + std::to_string(h));
      }
    }
    for (const auto& [id, h] : batch) {
      entries_.push_back({id, h, next_index_++});
    }
    std::vector<BufferEntry> evicted;
    while (entries_.size() > capacity_) {
      evicted.push_back(entries_.front());
      entries_.pop_front();
    }
    return evicted;
  }

  Vector values() const {
    Vector out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.entropy);
    return out;
  }

  // In-place value update for refresh; FIFO position is untouched.
  void set_entropy(std::size_t pos, double entropy) {
    if (!std::isfinite(entropy) || entropy < 0.0) {
      throw std::invalid_argument("refreshed entropy is invalid: " + std::to_string(entropy));
    }
    entries_[pos].entropy = entropy;
  }

  // Restore a snapshot (checkpoint resume).
  void restore(std::vector<BufferEntry> entries, std::uint64_t next_index) {
    if (entries.size() > capacity_) throw ConfigError("snapshot exceeds buffer capacity");
    entries_.assign(entries.begin(), entries.end());
    next_index_ = next_index;
  }

 private:
  std::size_t capacity_;
  std::deque<BufferEntry> entries_;
  std::uint64_t next_index_ = 0;
};

// Alignment starts once both buffers hold at least ceil(M/2) entries.
inline bool eal_ready(const EntropyBuffer& buf_v, const EntropyBuffer& buf_s, std::size_t capacity) {
  const std::size_t gate = (capacity + 1) / 2;
  return buf_v.size() >= gate && buf_s.size() >= gate;
}

// Recomputes the floor(M/r) oldest entries (all of them if the buffer is
// smaller) through `recompute`, which maps a sample id to its fresh entropy
// or nullopt when the id cannot be resolved. Returns the refresh count.
template <class RecomputeFn>
std::size_t buffer_refresh(EntropyBuffer& buf, RecomputeFn&& recompute, std::size_t refresh_step) {
  if (buf.size() == 0) throw std::invalid_argument("cannot refresh an empty buffer");
  if (refresh_step < 1) throw std::invalid_argument("refresh step must be >= 1");
  const std::size_t target = buf.capacity() / refresh_step;
  const std::size_t n = std::min(buf.size(), target);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t id = buf.entries()[i].sample_id;
    std::optional<double> h = recompute(id);
    if (!h.has_value()) {
      throw std::invalid_argument("sample id not resolvable: " + std::to_string(id));
    }
    buf.set_entropy(i, *h);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Energy distance between the two empirical distributions:
//   D^2 = 2/(nm) sum_{ij}|v_i - s_j| - 1/n^2 sum_{ii'}|v_i - v_i'|
//                                    - 1/m^2 sum_{jj'}|s_j - s_j'|
// Plug-in estimator: non-negative, symmetric, exactly zero iff the samples
// agree as multisets. Computed in O(n log n) from sorted copies; compensated
// sums keep the value within one ulp of the pairwise evaluation.
// ---------------------------------------------------------------------------

struct EnergyDistanceResult {
  double value = 0.0;
  Vector grad_v;  // d value / d v_i for every entry of v
};

namespace detail {

// sum over the sorted sample of |x - s_j|, plus (#less - #greater) for the
// subgradient; equal elements contribute zero on both counts.
struct AbsDiffSum {
  double sum;
  std::ptrdiff_t sign_count;
};

inline AbsDiffSum abs_diff_against(double x, const Vector& sorted, const Vector& prefix) {
  const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
  const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
  const auto m = static_cast<std::ptrdiff_t>(sorted.size());
  const double total = prefix[sorted.size()];
  const double sum_less = prefix[lo];
  const double sum_greater = total - prefix[hi];
  const double sum = (x * static_cast<double>(lo) - sum_less) +
                     (sum_greater - x * static_cast<double>(m - hi));
  return {sum, lo - (m - hi)};
}

}  // namespace detail

inline EnergyDistanceResult eal_loss(std::span<const double> v, std::span<const double> s) {
  if (v.size() < 2 || s.size() < 2) throw std::invalid_argument("insufficient sample");
  require_finite(v, "entropy sample");
  require_finite(s, "entropy sample");

  const auto n = static_cast<double>(v.size());
  const auto m = static_cast<double>(s.size());

  Vector sv(v.begin(), v.end());
  Vector ss(s.begin(), s.end());
  std::sort(sv.begin(), sv.end());
  std::sort(ss.begin(), ss.end());

  auto prefix = [](const Vector& sorted) {
    Vector p(sorted.size() + 1, 0.0);
    StableSum acc;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      acc.add(sorted[i]);
      p[i + 1] = acc.value();
    }
    return p;
  };
  const Vector pv = prefix(sv);
  const Vector ps = prefix(ss);

  // Within-sample ordered sums from the sorted order: each element at sorted
  // position k carries coefficient (2k - n + 1), and every unordered pair is
  // counted twice.
  auto within_ordered = [](const Vector& sorted) {
    StableSum acc;
    const auto n_local = static_cast<double>(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      acc.add(sorted[k] * (2.0 * static_cast<double>(k) - n_local + 1.0));
    }
    return 2.0 * acc.value();
  };

  StableSum cross;
  EnergyDistanceResult result;
  result.grad_v.resize(v.size());
  const double cross_coeff = 2.0 / (n * m);
  const double within_v_coeff = 1.0 / (n * n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto against_s = detail::abs_diff_against(v[i], ss, ps);
    cross.add(against_s.sum);
    const auto against_v = detail::abs_diff_against(v[i], sv, pv);
    result.grad_v[i] = cross_coeff * static_cast<double>(against_s.sign_count) -
                       2.0 * within_v_coeff * static_cast<double>(against_v.sign_count);
  }

  result.value = cross_coeff * cross.value() - within_v_coeff * within_ordered(sv) -
                 (1.0 / (m * m)) * within_ordered(ss);
  return result;
}

// ---------------------------------------------------------------------------
// Feature alignment: InfoNCE over cosine similarities, image i paired with
// caption i, negatives drawn within the batch.
// ---------------------------------------------------------------------------

struct FeatureAlignmentResult {
  double value = 0.0;
  std::vector<Vector> grad_visual;  // d value / d z~_v,i (pre-normalization)
  std::vector<Vector> grad_text;    // d value / d z~_s,j (pre-normalization)
};

inline FeatureAlignmentResult fal_loss(const std::vector<Vector>& z_visual,
                                       const std::vector<Vector>& z_text, double tau) {
  if (z_visual.empty()) throw std::invalid_argument("empty batch");
  if (z_visual.size() != z_text.size()) {
    throw std::invalid_argument("batch size mismatch: " + std::to_string(z_visual.size()) +
                                " visual rows vs " + std::to_string(z_text.size()) + " text rows");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");

  const std::size_t n = z_visual.size();
  std::vector<Vector> u(n), w(n);
  Vector norm_v(n), norm_s(n);
  for (std::size_t i = 0; i < n; ++i) {
    norm_v[i] = norm(z_visual[i]);
    norm_s[i] = norm(z_text[i]);
    u[i] = l2_normalize(z_visual[i]);
    w[i] = l2_normalize(z_text[i]);
  }

  // logits[i][j] = cos(u_i, w_j) / tau
  std::vector<Vector> logits(n, Vector(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits[i][j] = dot(u[i], w[j]) / tau;
  }

  double loss = 0.0;
  std::vector<Vector> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = softmax(logits[i]);
    const double max_logit = *std::max_element(logits[i].begin(), logits[i].end());
    double lse = 0.0;
    for (double l : logits[i]) lse += std::exp(l - max_logit);
    loss += (max_logit + std::log(lse)) - logits[i][i];
  }
  loss /= static_cast<double>(n);

  FeatureAlignmentResult result;
  result.value = loss;
  result.grad_visual.assign(n, Vector(z_visual.front().size(), 0.0));
  result.grad_text.assign(n, Vector(z_text.front().size(), 0.0));

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<Vector> du(n, Vector(u.front().size(), 0.0));
  std::vector<Vector> dw(n, Vector(w.front().size(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = inv_n * (probs[i][j] - (i == j ? 1.0 : 0.0)) / tau;
      axpy(g, w[j], du[i]);
      axpy(g, u[i], dw[j]);
    }
  }
  // through the normalization: d z = (d u - (d u . u) u) / |z|
  for (std::size_t i = 0; i < n; ++i) {
    const double proj_u = dot(du[i], u[i]);
    const double proj_w = dot(dw[i], w[i]);
    for (std::size_t k = 0; k < du[i].size(); ++k) {
      result.grad_visual[i][k] = (du[i][k] - proj_u * u[i][k]) / norm_v[i];
      result.grad_text[i][k] = (dw[i][k] - proj_w * w[i][k]) / norm_s[i];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Composite objective and momentum update
// ---------------------------------------------------------------------------

inline double total_loss(double mse, double eal, double fal, double lambda, double gamma) {
  if (!std::isfinite(mse)) throw NumericalError("non-finite component: mse");
  if (!std::isfinite(eal)) throw NumericalError("non-finite component: eal");
  if (!std::isfinite(fal)) throw NumericalError("non-finite component: fal");
  return mse + lambda * eal + gamma * fal;
}

// xi <- m xi + (1 - m) theta, elementwise.
inline void momentum_update(std::span<double> xi, std::span<const double> theta, double m) {
  if (xi.size() != theta.size()) {
    throw std::invalid_argument("shape mismatch: xi has " + std::to_string(xi.size()) +
                                " elements, theta has " + std::to_string(theta.size()));
  }
  if (!(m > 0.0 && m < 1.0)) throw std::invalid_argument("momentum must be in (0,1)");
  for (std::size_t i = 0; i < xi.size(); ++i) {
    xi[i] = m * xi[i] + (1.0 - m) * theta[i];
  }
}

}  // namespace d2s
