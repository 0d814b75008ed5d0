#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2s/errors.hpp"
#include "d2s/rng.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

// Generator settings. The caption vocabulary is partitioned into facet
// blocks, in order: count tokens (0..max_objects), category tokens,
// background tokens, complexity-bucket tokens (10 deciles).
struct GenConfig {
  std::size_t grid = 32;
  std::size_t patch = 8;  // images must stay compatible with the encoder grid
  std::size_t max_objects = 8;
  std::size_t categories = 8;
  std::size_t backgrounds = 4;
  double w_count = 0.4;
  double w_category = 0.3;
  double w_noise = 0.3;

  static constexpr std::size_t kBuckets = 10;
  static constexpr double kGtClamp = 1e-3;

  std::size_t vocab_size() const {
    return (max_objects + 1) + categories + backgrounds + kBuckets;
  }
  std::size_t count_token(std::size_t n) const { return n; }
  std::size_t category_token(std::size_t c) const { return (max_objects + 1) + c; }
  std::size_t background_token(std::size_t b) const {
    return (max_objects + 1) + categories + b;
  }
  std::size_t bucket_token(std::size_t k) const {
    return (max_objects + 1) + categories + backgrounds + k;
  }

  void validate() const {
    if (grid == 0 || patch == 0 || grid % patch != 0) {
      throw ConfigError("generator grid must be divisible by the patch size");
    }
    if (max_objects < 1 || categories < 1 || backgrounds < 1) {
      throw ConfigError("generator needs at least one object, category and background");
    }
    if (w_count < 0.0 || w_category < 0.0 || w_noise < 0.0 ||
        std::abs(w_count + w_category + w_noise - 1.0) > 1e-12) {
      throw ConfigError("weight simplex violation");
    }
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t n_objects = 0;
  std::vector<std::size_t> object_categories;  // one per object
  double noise_level = 0.0;
  std::size_t background_id = 0;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SyntheticSample {
  std::uint64_t seed = 0;
  SceneSpec spec;
  Vector image;                      // grid x grid, row-major, values in [0,1]
  std::vector<std::size_t> caption;  // token ids
  double gt = 0.0;                   // ground-truth complexity in (0,1)

  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

using Dataset = std::vector<SyntheticSample>;

inline std::size_t distinct_categories(const SceneSpec& spec) {
  std::set<std::size_t> s(spec.object_categories.begin(), spec.object_categories.end());
  return s.size();
}

// Transparent complexity score: weighted object-count, category-diversity and
// noise terms, clamped into (0,1).
inline double gt_complexity(const SceneSpec& spec, const GenConfig& cfg) {
  cfg.validate();
  const double count_term = static_cast<double>(spec.n_objects) /
                            static_cast<double>(cfg.max_objects);
  const double category_term = static_cast<double>(distinct_categories(spec)) /
                               static_cast<double>(cfg.categories);
  const double raw = cfg.w_count * count_term + cfg.w_category * category_term +
                     cfg.w_noise * spec.noise_level;
  return std::clamp(raw, GenConfig::kGtClamp, 1.0 - GenConfig::kGtClamp);
}

// Scene layout from the sample seed alone. A uniform complexity target is
// drawn first and the factors are solved to sit near it, so a corpus covers
// the whole (0,1) range instead of piling up mid-scale.
inline SceneSpec scene_from_seed(std::uint64_t seed, const GenConfig& cfg) {
  cfg.validate();
  Prng rng = Prng(seed).stream("scene");
  const double target = rng.uniform();
  const auto k_max = static_cast<double>(cfg.max_objects);
  const auto c_max = static_cast<double>(cfg.categories);

  SceneSpec spec;
  spec.seed = seed;
  const auto jitter = [&rng] { return rng.uniform() - 0.5; };
  spec.n_objects = static_cast<std::size_t>(
      std::clamp(std::lround(target * k_max + 2.0 * jitter()), 0l,
                 static_cast<long>(cfg.max_objects)));

  std::size_t n_distinct = 0;
  if (spec.n_objects > 0) {
    const long ceiling = static_cast<long>(std::min(spec.n_objects, cfg.categories));
    n_distinct = static_cast<std::size_t>(
        std::clamp(std::lround(target * c_max + 2.0 * jitter()), 1l, ceiling));
    std::vector<std::size_t> pool(cfg.categories);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < n_distinct; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    spec.object_categories.assign(pool.begin(), pool.begin() + static_cast<long>(n_distinct));
    while (spec.object_categories.size() < spec.n_objects) {
      const auto pick = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(n_distinct) - 1));
      spec.object_categories.push_back(spec.object_categories[pick]);
    }
  }

  // Solve the noise term toward the target; fall back to a random level when
  // the noise weight is configured away.
  if (cfg.w_noise > 1e-12) {
    const double residual = target -
                            cfg.w_count * static_cast<double>(spec.n_objects) / k_max -
                            cfg.w_category * static_cast<double>(n_distinct) / c_max;
    spec.noise_level = std::clamp(residual / cfg.w_noise, 0.0, 1.0);
  } else {
    spec.noise_level = rng.uniform();
  }
  spec.background_id = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(cfg.backgrounds) - 1));
  return spec;
}

// Paints the scene: flat background, axis-aligned discs/rectangles with
// category-determined intensity, then zero-mean uniform noise scaled by the
// noise level. Backgrounds live in [0.15, 0.35] and objects in [0.45, 0.85],
// so object pixels are separable from any background; the noise amplitude of
// 0.15 keeps every pixel inside [0, 1] without clamping.
inline Vector render_image(const SceneSpec& spec, const GenConfig& cfg) {
  const std::size_t g = cfg.grid;
  const double bg = 0.15 + 0.2 * (static_cast<double>(spec.background_id) + 0.5) /
                               static_cast<double>(cfg.backgrounds);
  Vector image(g * g, bg);

  Prng rng = Prng(spec.seed).stream("render");
  for (std::size_t obj = 0; obj < spec.n_objects; ++obj) {
    const std::size_t cat = spec.object_categories[obj];
    const double intensity = 0.45 + 0.4 * (static_cast<double>(cat) + 0.5) /
                                        static_cast<double>(cfg.categories);
    const double cx = rng.uniform() * static_cast<double>(g);
    const double cy = rng.uniform() * static_cast<double>(g);
    const double half = (0.10 + 0.05 * rng.uniform()) * static_cast<double>(g);
    const bool disc = cat % 2 == 0;
    const auto lo_r = static_cast<long>(std::floor(cy - half));
    const auto hi_r = static_cast<long>(std::ceil(cy + half));
    const auto lo_c = static_cast<long>(std::floor(cx - half));
    const auto hi_c = static_cast<long>(std::ceil(cx + half));
    for (long r = std::max(0l, lo_r); r <= std::min(static_cast<long>(g) - 1, hi_r); ++r) {
      for (long c = std::max(0l, lo_c); c <= std::min(static_cast<long>(g) - 1, hi_c); ++c) {
        const double dr = (static_cast<double>(r) + 0.5) - cy;
        const double dc = (static_cast<double>(c) + 0.5) - cx;
        if (!disc || dr * dr + dc * dc <= half * half) {
          image[static_cast<std::size_t>(r) * g + static_cast<std::size_t>(c)] = intensity;
        }
      }
    }
  }

  // The noise field depends only on the seed; the level scales it.
  Prng noise = Prng(spec.seed).stream("noise");
  for (double& px : image) {
    px += 0.15 * spec.noise_level * (2.0 * noise.uniform() - 1.0);
  }
  return image;
}

// Caption facets: one count token, the distinct category tokens (sorted),
// one background token, one complexity-bucket token.
inline std::vector<std::size_t> make_caption(const SceneSpec& spec, double gt,
                                             const GenConfig& cfg) {
  std::vector<std::size_t> caption;
  caption.push_back(cfg.count_token(spec.n_objects));
  std::set<std::size_t> cats(spec.object_categories.begin(), spec.object_categories.end());
  for (std::size_t c : cats) caption.push_back(cfg.category_token(c));
  caption.push_back(cfg.background_token(spec.background_id));
  const auto bucket = std::min<std::size_t>(GenConfig::kBuckets - 1,
                                            static_cast<std::size_t>(gt * GenConfig::kBuckets));
  caption.push_back(cfg.bucket_token(bucket));
  return caption;
}

inline SyntheticSample generate_sample(std::uint64_t seed, const GenConfig& cfg) {
  SyntheticSample sample;
  sample.seed = seed;
  sample.spec = scene_from_seed(seed, cfg);
  sample.gt = gt_complexity(sample.spec, cfg);
  sample.image = render_image(sample.spec, cfg);
  sample.caption = make_caption(sample.spec, sample.gt, cfg);
  return sample;
}

// Per-sample sub-seeds make parallel and serial generation identical.
inline Dataset generate_dataset(std::uint64_t corpus_seed, std::size_t count,
                                const GenConfig& cfg) {
  Dataset data;
  data.reserve(count);
  const Prng base = Prng(corpus_seed).stream("sample");
  for (std::size_t i = 0; i < count; ++i) {
    data.push_back(generate_sample(base.stream(static_cast<std::uint64_t>(i)).seed(), cfg));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Dataset file: UTF-8, one JSON record per line with fields
//   {seed, spec, image, caption, gt}
// ---------------------------------------------------------------------------

inline nlohmann::json sample_to_json(const SyntheticSample& s) {
  return nlohmann::json{
      {"seed", s.seed},
      {"spec",
       {{"seed", s.spec.seed},
        {"n_objects", s.spec.n_objects},
        {"object_categories", s.spec.object_categories},
        {"noise_level", s.spec.noise_level},
        {"background_id", s.spec.background_id}}},
      {"image", s.image},
      {"caption", s.caption},
      {"gt", s.gt}};
}

inline SyntheticSample sample_from_json(const nlohmann::json& j) {
  SyntheticSample s;
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& spec = j.at("spec");
  s.spec.seed = spec.at("seed").get<std::uint64_t>();
  s.spec.n_objects = spec.at("n_objects").get<std::size_t>();
  s.spec.object_categories = spec.at("object_categories").get<std::vector<std::size_t>>();
  s.spec.noise_level = spec.at("noise_level").get<double>();
  s.spec.background_id = spec.at("background_id").get<std::size_t>();
  s.image = j.at("image").get<Vector>();
  s.caption = j.at("caption").get<std::vector<std::size_t>>();
  s.gt = j.at("gt").get<double>();
  return s;
}

inline void write_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& sample : data) {
    out << sample_to_json(sample).dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      throw IoError(path + ": malformed record at line " + std::to_string(line_no));
    }
    try {
      data.push_back(sample_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ": malformed record at line " + std::to_string(line_no) + ": " +
                    e.what());
    }
  }
  return data;
}

// Decile histogram of ground-truth scores; the manifest companion of a
// generated corpus.
inline std::vector<std::size_t> gt_decile_histogram(const Dataset& data) {
  std::vector<std::size_t> hist(GenConfig::kBuckets, 0);
  for (const auto& s : data) {
    const auto bucket = std::min<std::size_t>(GenConfig::kBuckets - 1,
                                              static_cast<std::size_t>(s.gt * GenConfig::kBuckets));
    hist[bucket] += 1;
  }
  return hist;
}

}  // namespace d2s
