#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "d2s/alignment.hpp"
#include "d2s/encoders.hpp"
#include "d2s/rng.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

// Everything that trains. The frozen text embedder lives outside.
struct ModelParams {
  VisionEncoderParams vision;
  ConnectorParams connector;
  ScoreHeadParams head;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Fixed tensor order; flattening, EMA, the optimizer and serialization all
// walk parameters the same way.
template <class F>
void visit_params(ModelParams& m, F&& f) {
  f(m.vision.patch_embed.w.data());
  f(m.vision.patch_embed.b);
  f(m.vision.mlp_in.w.data());
  f(m.vision.mlp_in.b);
  f(m.vision.mlp_out.w.data());
  f(m.vision.mlp_out.b);
  f(m.vision.pool_query);
  f(m.vision.out_proj.w.data());
  f(m.vision.out_proj.b);
  f(m.connector.w.data());
  f(m.head.hidden.w.data());
  f(m.head.hidden.b);
  f(m.head.out.w.data());
  f(m.head.out.b);
}

template <class F>
void visit_params(const ModelParams& m, F&& f) {
  visit_params(const_cast<ModelParams&>(m), [&](Vector& v) { f(std::as_const(v)); });
}

inline std::size_t param_count(const ModelParams& m) {
  std::size_t n = 0;
  visit_params(m, [&](const Vector& v) { n += v.size(); });
  return n;
}

inline Vector flatten_params(const ModelParams& m) {
  Vector flat;
  flat.reserve(param_count(m));
  visit_params(m, [&](const Vector& v) { flat.insert(flat.end(), v.begin(), v.end()); });
  return flat;
}

inline void unflatten_params(std::span<const double> flat, ModelParams& m) {
  std::size_t offset = 0;
  visit_params(m, [&](Vector& v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
  if (offset != flat.size()) {
    throw std::invalid_argument("flat parameter length " + std::to_string(flat.size()) +
                                " does not match model size " + std::to_string(offset));
  }
}

inline void zero_params(ModelParams& m) {
  visit_params(m, [](Vector& v) { std::fill(v.begin(), v.end(), 0.0); });
}

// Same-shaped zeroed gradient holder.
inline ModelParams make_grads(const ModelParams& like) {
  ModelParams g = like;
  zero_params(g);
  return g;
}

inline ModelParams init_model(const EncoderConfig& cfg, const Prng& root) {
  const Prng base = root.stream("init");
  ModelParams m;
  m.vision = init_vision_encoder(cfg, base.stream("vision"));
  m.connector = init_connector(cfg, base.stream("connector"));
  m.head = init_score_head(cfg, base.stream("head"));
  return m;
}

// Frozen exponential-moving-average copy of the trainable parameters. Never
// sees optimizer gradients; only ema_update touches it.
struct MomentumModel {
  ModelParams params;
  double momentum = 0.995;

  void ema_update(const ModelParams& live) {
    ModelParams& self = params;
    std::vector<Vector*> mine;
    visit_params(self, [&](Vector& v) { mine.push_back(&v); });
    std::size_t i = 0;
    visit_params(live, [&](const Vector& v) {
      momentum_update(*mine[i], v, momentum);
      ++i;
    });
  }
};

}  // namespace d2s
