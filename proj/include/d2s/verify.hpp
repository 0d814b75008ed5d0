#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "d2s/alignment.hpp"
#include "d2s/config.hpp"
#include "d2s/encoders.hpp"
#include "d2s/gradcheck.hpp"
#include "d2s/metrics.hpp"
#include "d2s/model.hpp"
#include "d2s/optim.hpp"
#include "d2s/rng.hpp"
#include "d2s/synthdata.hpp"
#include "d2s/trainer.hpp"

// Release-gate oracle suite. Every reference here is an independent route to
// the same quantity as the production code: pairwise loops instead of sorted
// prefix sums, counting ranks instead of sort-based ranks, extended-precision
// accumulation instead of plain sums.
namespace d2s::verify {

// Energy distance by literal pairwise summation over all index pairs.
inline double energy_distance_reference(std::span<const double> v, std::span<const double> s) {
  const auto n = static_cast<double>(v.size());
  const auto m = static_cast<double>(s.size());
  StableSum cross, within_v, within_s;
  for (double vi : v) {
    for (double sj : s) cross.add(std::abs(vi - sj));
  }
  for (double vi : v) {
    for (double vj : v) within_v.add(std::abs(vi - vj));
  }
  for (double si : s) {
    for (double sj : s) within_s.add(std::abs(si - sj));
  }
  return 2.0 / (n * m) * cross.value() - within_v.value() / (n * n) -
         within_s.value() / (m * m);
}

// Average ranks by counting comparisons, O(n^2).
inline Vector counting_ranks_reference(std::span<const double> v) {
  Vector ranks(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;  // includes self
    }
    ranks[i] = static_cast<double>(less) + 0.5 * static_cast<double>(equal + 1);
  }
  return ranks;
}

inline double pearson_reference(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<long double>(a.size());
  long double mean_a = 0.0l, mean_b = 0.0l;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  long double cov = 0.0l, var_a = 0.0l, var_b = 0.0l;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double da = a[i] - mean_a;
    const long double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  return static_cast<double>(cov / std::sqrt(var_a * var_b));
}

inline double spearman_reference(std::span<const double> y, std::span<const double> y_hat) {
  const Vector ra = counting_ranks_reference(y);
  const Vector rb = counting_ranks_reference(y_hat);
  return pearson_reference(ra, rb);
}

inline double rmse_reference(std::span<const double> y, std::span<const double> y_hat) {
  long double s = 0.0l;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double d = static_cast<long double>(y[i]) - static_cast<long double>(y_hat[i]);
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s / static_cast<long double>(y.size())));
}

inline double rmae_reference(std::span<const double> y, std::span<const double> y_hat) {
  long double s = 0.0l;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += std::abs(static_cast<long double>(y[i]) - static_cast<long double>(y_hat[i]));
  }
  return static_cast<double>(std::sqrt(s / static_cast<long double>(y.size())));
}

// ---------------------------------------------------------------------------
// Check suite
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Options {
  // Energy-distance function under test; swappable so the suite itself can be
  // shown to catch an injected fault.
  std::function<double(std::span<const double>, std::span<const double>)> eal_value =
      [](std::span<const double> v, std::span<const double> s) { return eal_loss(v, s).value; };
  std::uint64_t seed = 20240;
  std::size_t energy_pairs = 200;
  std::size_t metric_pairs = 100;
};

inline CheckResult check_energy_distance(const Options& opt) {
  Prng rng = Prng(opt.seed).stream("energy");
  double worst = 0.0;
  for (std::size_t trial = 0; trial < opt.energy_pairs; ++trial) {
    const auto nv = static_cast<std::size_t>(rng.uniform_int(2, 64));
    const auto ns = static_cast<std::size_t>(rng.uniform_int(2, 64));
    Vector v(nv), s(ns);
    for (double& x : v) x = 4.0 * rng.uniform();
    for (double& x : s) x = 4.0 * rng.uniform();
    const double got = opt.eal_value(v, s);
    const double want = energy_distance_reference(v, s);
    worst = std::max(worst, std::abs(got - want));
    worst = std::max(worst, std::abs(got - opt.eal_value(s, v)));  // symmetry
    const double self = std::abs(opt.eal_value(v, v));
    worst = std::max(worst, self);  // zero on identical multisets
  }
  std::ostringstream detail;
  detail << "max |difference| vs pairwise reference = " << worst;
  return {"energy distance vs brute force", worst < 1e-12, detail.str()};
}

inline CheckResult check_rank_metrics(const Options& opt) {
  Prng rng = Prng(opt.seed).stream("metrics");
  double worst = 0.0;
  for (std::size_t trial = 0; trial < opt.metric_pairs; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(3, 100));
    Vector y(n), y_hat(n);
    for (double& x : y) x = rng.uniform();
    for (double& x : y_hat) x = rng.uniform();
    // inject ties on both sides
    y[n / 2] = y[0];
    y_hat[n - 1] = y_hat[n / 3];
    worst = std::max(worst, std::abs(srcc(y, y_hat) - spearman_reference(y, y_hat)));
    worst = std::max(worst, std::abs(pcc(y, y_hat) - pearson_reference(y, y_hat)));
    worst = std::max(worst, std::abs(rmse(y, y_hat) - rmse_reference(y, y_hat)));
    worst = std::max(worst, std::abs(rmae(y, y_hat) - rmae_reference(y, y_hat)));
  }
  std::ostringstream detail;
  detail << "max |difference| vs reference metrics = " << worst;
  return {"srcc/pcc/rmse/rmae vs oracles", worst < 1e-10, detail.str()};
}

inline CheckResult check_momentum_closed_form(const Options&) {
  const double m = 0.995;
  const std::size_t t = 1000;
  Vector xi{0.3, -1.2, 0.0, 2.5};
  const Vector xi0 = xi;
  const Vector theta{1.0, 0.5, -0.25, 2.5};
  for (std::size_t i = 0; i < t; ++i) momentum_update(xi, theta, m);
  const double mt = std::pow(m, static_cast<double>(t));
  double worst = 0.0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    const double closed = mt * xi0[k] + (1.0 - mt) * theta[k];
    worst = std::max(worst, std::abs(xi[k] - closed));
  }
  std::ostringstream detail;
  detail << "max |iterated - closed form| after " << t << " steps = " << worst;
  return {"momentum EMA closed form", worst < 1e-12, detail.str()};
}

inline CheckResult check_gradients(const Options& opt) {
  EncoderConfig enc;
  enc.grid = 16;
  enc.patch = 8;
  enc.d_token = 6;
  enc.d_hidden = 8;
  enc.d_visual = 10;
  enc.d_text = 6;
  enc.vocab = 12;

  GenConfig gen;
  gen.grid = enc.grid;
  gen.patch = enc.patch;

  const Prng root(opt.seed);
  ModelParams model = init_model(enc, root);
  const TextEmbedderParams text = init_text_embedder(enc, root.stream("init").stream("text"));

  AblationFlags flags;  // everything on
  AlignmentConfig align;
  align.lambda = 5.0;
  align.gamma = 0.01;
  align.temperature = 0.07;

  const std::size_t batch_size = 4;
  std::vector<Vector> images(batch_size);
  std::vector<Vector> embeddings(batch_size);
  Vector entropies(batch_size);
  Vector targets(batch_size);
  Prng drng = root.stream("gradcheck-data");
  for (std::size_t i = 0; i < batch_size; ++i) {
    images[i].resize(enc.grid * enc.grid);
    for (double& px : images[i]) px = drng.uniform();
    std::vector<std::size_t> caption{static_cast<std::size_t>(drng.uniform_int(0, 11)),
                                     static_cast<std::size_t>(drng.uniform_int(0, 11))};
    embeddings[i] = embed_caption(caption, text);
    entropies[i] = feature_entropy(embeddings[i]);
    targets[i] = 0.2 + 0.6 * drng.uniform();
  }
  Vector buffer_v(8), buffer_s(8);
  for (double& x : buffer_v) x = 0.5 + 1.5 * drng.uniform();
  for (double& x : buffer_s) x = 0.5 + 1.5 * drng.uniform();

  auto make_batch = [&]() {
    std::vector<BatchSample> batch;
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch.push_back({images[i], targets[i], &embeddings[i], entropies[i]});
    }
    return batch;
  };

  const auto batch = make_batch();
  const CompositeLossResult at_point =
      composite_loss(model, enc, flags, align, batch, buffer_v, buffer_s, /*eal_active=*/true);
  const Vector analytic = flatten_params(at_point.grads);
  ModelParams scratch = model;
  auto loss_at = [&](std::span<const double> flat) {
    unflatten_params(flat, scratch);
    return composite_loss(scratch, enc, flags, align, batch, buffer_v, buffer_s, true).total;
  };
  const GradCheckReport report = grad_check(loss_at, analytic, flatten_params(model), 1e-5);

  std::ostringstream detail;
  detail << "max gradient relative error = " << report.max_rel_err << " (parameter "
         << report.worst_index << ")";
  return {"composite objective gradient vs finite differences", report.ok(1e-4), detail.str()};
}

inline CheckResult check_buffer_replay(const Options& opt) {
  Prng rng = Prng(opt.seed).stream("buffer");
  const std::size_t capacity = 48;
  EntropyBuffer buf(capacity);
  std::vector<BufferEntry> oracle;
  std::uint64_t next_insertion = 0;
  std::uint64_t next_id = 0;
  bool match = true;
  for (std::size_t op = 0; op < 10000 && match; ++op) {
    if (buf.size() > 0 && rng.uniform() < 0.3) {
      const std::size_t n = std::min<std::size_t>(buf.size(), capacity / 8);
      buffer_refresh(
          buf,
          [&](std::uint64_t id) { return std::optional<double>(static_cast<double>(id % 7) + 0.5); },
          /*refresh_step=*/8);
      for (std::size_t i = 0; i < n; ++i) {
        oracle[i].entropy = static_cast<double>(oracle[i].sample_id % 7) + 0.5;
      }
    } else {
      const auto k = static_cast<std::size_t>(rng.uniform_int(1, 6));
      std::vector<std::pair<std::uint64_t, double>> batch;
      for (std::size_t i = 0; i < k; ++i) {
        batch.emplace_back(next_id, rng.uniform() * 3.0);
        oracle.push_back({next_id, batch.back().second, next_insertion++});
        ++next_id;
      }
      buf.push(batch);
      while (oracle.size() > capacity) oracle.erase(oracle.begin());
    }
    match = buf.size() == oracle.size() &&
            std::equal(oracle.begin(), oracle.end(), buf.entries().begin());
  }
  return {"buffer replay vs list oracle", match,
          match ? "contents identical over 10000 operations" : "contents diverged"};
}

inline std::vector<CheckResult> run_all(const Options& opt = {}) {
  return {check_energy_distance(opt), check_rank_metrics(opt), check_momentum_closed_form(opt),
          check_gradients(opt), check_buffer_replay(opt)};
}

inline bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace d2s::verify
