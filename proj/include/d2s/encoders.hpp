#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/ops.hpp"
#include "d2s/rng.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

struct EncoderConfig {
  std::size_t grid = 32;      // image side
  std::size_t patch = 8;      // patch side; grid must be divisible by it
  std::size_t d_token = 32;   // per-patch token width
  std::size_t d_hidden = 64;  // MLP hidden width (token mixer and score head)
  std::size_t d_visual = 64;  // visual feature width
  std::size_t d_text = 32;    // text feature width
  std::size_t vocab = 31;     // caption vocabulary size
  double text_scale = 1.0;    // token-table draw scale; sets where caption
                              // entropies land relative to log(d_text)
  std::uint64_t text_seed = 1118;  // the frozen text embedder plays the role
                                   // of a pretrained model: fixed across
                                   // training seeds unless reconfigured

  std::size_t tokens_per_side() const { return grid / patch; }
  std::size_t token_count() const { return tokens_per_side() * tokens_per_side(); }

  void validate() const {
    if (grid == 0 || patch == 0 || grid % patch != 0) {
      throw ConfigError("patch grid mismatch");
    }
    if (d_token == 0 || d_hidden == 0 || d_visual == 0 || d_text == 0 || vocab == 0) {
      throw ConfigError("encoder dimensions must be positive");
    }
    if (!(text_scale > 0.0)) throw ConfigError("text scale must be positive");
  }
};

// Linear layer; an empty bias vector means the layer has none.
struct Linear {
  Tensor2D w;
  Vector b;

  friend bool operator==(const Linear&, const Linear&) = default;
};

struct VisionEncoderParams {
  Linear patch_embed;  // patch*patch -> d_token
  Linear mlp_in;       // d_token -> d_hidden
  Linear mlp_out;      // d_hidden -> d_token
  Vector pool_query;   // d_token, learnable attention query
  Linear out_proj;     // d_token -> d_visual

  friend bool operator==(const VisionEncoderParams&, const VisionEncoderParams&) = default;
};

// Frozen for the whole training run; never receives gradients.
struct TextEmbedderParams {
  Tensor2D token_table;  // vocab x d_text
  Linear mix;            // d_text -> d_text

  friend bool operator==(const TextEmbedderParams&, const TextEmbedderParams&) = default;
};

// Training-only projection into the text space; dropped at inference.
struct ConnectorParams {
  Tensor2D w;  // d_text x d_visual, no bias

  friend bool operator==(const ConnectorParams&, const ConnectorParams&) = default;
};

struct ScoreHeadParams {
  Linear hidden;  // d_visual -> d_hidden
  Linear out;     // d_hidden -> 1, sigmoid on top

  friend bool operator==(const ScoreHeadParams&, const ScoreHeadParams&) = default;
};

enum class PoolMode { kAttention, kMean };

// ---------------------------------------------------------------------------
// Initialization: weights ~ N(0, 1/fan_in), biases zero. Each tensor draws
// from its own named sub-stream so adding a layer never shifts another
// layer's values.
// ---------------------------------------------------------------------------

inline Linear init_linear(std::size_t rows, std::size_t cols, Prng rng, bool bias = true) {
  Linear layer{Tensor2D(rows, cols), bias ? Vector(rows, 0.0) : Vector{}};
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(cols));
  for (double& x : layer.w.data()) x = std_dev * rng.normal();
  return layer;
}

inline VisionEncoderParams init_vision_encoder(const EncoderConfig& cfg, const Prng& base) {
  cfg.validate();
  VisionEncoderParams p;
  p.patch_embed = init_linear(cfg.d_token, cfg.patch * cfg.patch, base.stream("patch_embed"));
  p.mlp_in = init_linear(cfg.d_hidden, cfg.d_token, base.stream("mlp_in"));
  p.mlp_out = init_linear(cfg.d_token, cfg.d_hidden, base.stream("mlp_out"));
  // Query starts at half the weight scale: attention opens near the token
  // mean and sharpens as the query trains.
  p.pool_query.assign(cfg.d_token, 0.0);
  Prng qrng = base.stream("pool_query");
  const double qstd = 0.5 / std::sqrt(static_cast<double>(cfg.d_token));
  for (double& x : p.pool_query) x = qstd * qrng.normal();
  p.out_proj = init_linear(cfg.d_visual, cfg.d_token, base.stream("out_proj"));
  return p;
}

// The token table is an embedding, not a weight matrix, so it is drawn at
// text_scale per entry rather than 1/fan_in. The scale decides how far below
// log(d_text) caption-feature entropies sit, which is what the entropy
// buffers align against.
inline TextEmbedderParams init_text_embedder(const EncoderConfig& cfg, const Prng& base) {
  TextEmbedderParams p;
  p.token_table = Tensor2D(cfg.vocab, cfg.d_text);
  Prng trng = base.stream("token_table");
  for (double& x : p.token_table.data()) x = cfg.text_scale * trng.normal();
  p.mix = init_linear(cfg.d_text, cfg.d_text, base.stream("mix"));
  return p;
}

inline ConnectorParams init_connector(const EncoderConfig& cfg, const Prng& base) {
  return {init_linear(cfg.d_text, cfg.d_visual, base.stream("connector"), /*bias=*/false).w};
}

inline ScoreHeadParams init_score_head(const EncoderConfig& cfg, const Prng& base) {
  ScoreHeadParams p;
  p.hidden = init_linear(cfg.d_hidden, cfg.d_visual, base.stream("head_hidden"));
  p.out = init_linear(1, cfg.d_hidden, base.stream("head_out"));
  return p;
}

// ---------------------------------------------------------------------------
// Attention pooling
// ---------------------------------------------------------------------------

// Convex combination of tokens with weights softmax(query . token / sqrt(D)).
inline Vector attention_pool(const std::vector<Vector>& tokens, std::span<const double> query,
                             Vector* weights_out = nullptr) {
  if (tokens.empty()) throw std::invalid_argument("no tokens");
  const std::size_t d = tokens.front().size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vector scores(tokens.size());
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    scores[k] = scale * dot(query, tokens[k]);
  }
  Vector weights = softmax(scores);
  Vector pooled(d, 0.0);
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    axpy(weights[k], tokens[k], pooled);
  }
  if (weights_out) *weights_out = std::move(weights);
  return pooled;
}

// ---------------------------------------------------------------------------
// Vision encoder: patch embed -> per-token MLP -> pooling -> output projection
// ---------------------------------------------------------------------------

// Everything the backward pass needs from a forward call.
struct VisionTrace {
  std::vector<Vector> patches;  // raw pixel patches
  std::vector<Vector> tokens;   // patch embeddings
  std::vector<Vector> hidden;   // tanh(mlp_in token)
  std::vector<Vector> mixed;    // mlp_out hidden
  Vector attn;                  // pooling weights
  Vector pooled;
};

inline Vector encode_image(std::span<const double> image, const VisionEncoderParams& params,
                           const EncoderConfig& cfg, PoolMode mode = PoolMode::kAttention,
                           VisionTrace* trace = nullptr) {
  if (cfg.grid % cfg.patch != 0) throw std::invalid_argument("patch grid mismatch");
  if (image.size() != cfg.grid * cfg.grid) {
    throw std::invalid_argument("image has " + std::to_string(image.size()) +
                                " pixels, expected " + std::to_string(cfg.grid * cfg.grid));
  }
  const std::size_t side = cfg.tokens_per_side();
  const std::size_t p = cfg.patch;

  std::vector<Vector> patches(cfg.token_count());
  for (std::size_t pr = 0; pr < side; ++pr) {
    for (std::size_t pc = 0; pc < side; ++pc) {
      Vector& px = patches[pr * side + pc];
      px.resize(p * p);
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
          px[r * p + c] = image[(pr * p + r) * cfg.grid + (pc * p + c)];
        }
      }
    }
  }

  std::vector<Vector> tokens(patches.size());
  std::vector<Vector> hidden(patches.size());
  std::vector<Vector> mixed(patches.size());
  for (std::size_t k = 0; k < patches.size(); ++k) {
    tokens[k] = linear_apply(patches[k], params.patch_embed.w, params.patch_embed.b);
    hidden[k] = linear_apply(tokens[k], params.mlp_in.w, params.mlp_in.b);
    for (double& h : hidden[k]) h = std::tanh(h);
    mixed[k] = linear_apply(hidden[k], params.mlp_out.w, params.mlp_out.b);
  }

  Vector attn;
  Vector pooled;
  if (mode == PoolMode::kAttention) {
    pooled = attention_pool(mixed, params.pool_query, &attn);
  } else {
    attn.assign(mixed.size(), 1.0 / static_cast<double>(mixed.size()));
    pooled.assign(mixed.front().size(), 0.0);
    for (std::size_t k = 0; k < mixed.size(); ++k) axpy(attn[k], mixed[k], pooled);
  }

  Vector z_v = linear_apply(pooled, params.out_proj.w, params.out_proj.b);
  if (trace) {
    trace->patches = std::move(patches);
    trace->tokens = std::move(tokens);
    trace->hidden = std::move(hidden);
    trace->mixed = std::move(mixed);
    trace->attn = std::move(attn);
    trace->pooled = std::move(pooled);
  }
  return z_v;
}

// Accumulates parameter gradients for one image given dL/dz_v. Under mean
// pooling the query receives no gradient.
inline void encode_image_backward(const VisionTrace& trace, const VisionEncoderParams& params,
                                  std::span<const double> dz_v, PoolMode mode,
                                  VisionEncoderParams& grads) {
  const std::size_t n_tokens = trace.mixed.size();
  const std::size_t d = trace.mixed.front().size();

  // out_proj
  Vector d_pooled(d, 0.0);
  linear_backward_acc(trace.pooled, params.out_proj.w, dz_v, grads.out_proj.w,
                      grads.out_proj.b, d_pooled);

  // pooling
  std::vector<Vector> d_mixed(n_tokens, Vector(d, 0.0));
  if (mode == PoolMode::kAttention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vector d_weights(n_tokens);
    for (std::size_t k = 0; k < n_tokens; ++k) {
      d_weights[k] = dot(d_pooled, trace.mixed[k]);
      axpy(trace.attn[k], d_pooled, d_mixed[k]);
    }
    double weighted = 0.0;
    for (std::size_t k = 0; k < n_tokens; ++k) weighted += trace.attn[k] * d_weights[k];
    for (std::size_t k = 0; k < n_tokens; ++k) {
      const double d_score = trace.attn[k] * (d_weights[k] - weighted);
      axpy(d_score * scale, trace.mixed[k], grads.pool_query);
      axpy(d_score * scale, params.pool_query, d_mixed[k]);
    }
  } else {
    const double inv = 1.0 / static_cast<double>(n_tokens);
    for (std::size_t k = 0; k < n_tokens; ++k) axpy(inv, d_pooled, d_mixed[k]);
  }

  // per-token MLP and patch embedding
  for (std::size_t k = 0; k < n_tokens; ++k) {
    Vector d_hidden(trace.hidden[k].size(), 0.0);
    linear_backward_acc(trace.hidden[k], params.mlp_out.w, d_mixed[k], grads.mlp_out.w,
                        grads.mlp_out.b, d_hidden);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
      const double h = trace.hidden[k][i];
      d_hidden[i] *= 1.0 - h * h;
    }
    Vector d_token(trace.tokens[k].size(), 0.0);
    linear_backward_acc(trace.tokens[k], params.mlp_in.w, d_hidden, grads.mlp_in.w,
                        grads.mlp_in.b, d_token);
    linear_backward_acc(trace.patches[k], params.patch_embed.w, d_token, grads.patch_embed.w,
                        grads.patch_embed.b, {});
  }
}

// ---------------------------------------------------------------------------
// Text embedding (frozen): mix(mean of token embeddings). Order-insensitive;
// an empty caption embeds to the zero vector by convention.
// ---------------------------------------------------------------------------

inline Vector embed_caption(std::span<const std::size_t> token_ids,
                            const TextEmbedderParams& params) {
  const std::size_t d = params.token_table.cols();
  if (token_ids.empty()) return Vector(d, 0.0);
  Vector mean(d, 0.0);
  for (std::size_t id : token_ids) {
    if (id >= params.token_table.rows()) {
      throw std::invalid_argument("token id out of vocabulary: " + std::to_string(id));
    }
    axpy(1.0, params.token_table.row(id), mean);
  }
  const double inv = 1.0 / static_cast<double>(token_ids.size());
  for (double& x : mean) x *= inv;
  return linear_apply(mean, params.mix.w, params.mix.b);
}

// ---------------------------------------------------------------------------
// Connector and score head
// ---------------------------------------------------------------------------

inline Vector project_visual(std::span<const double> z_v, const ConnectorParams& connector) {
  return linear_apply(z_v, connector.w);
}

inline void project_visual_backward(std::span<const double> z_v, const ConnectorParams& connector,
                                    std::span<const double> d_proj, ConnectorParams& grads,
                                    std::span<double> dz_v) {
  linear_backward_acc(z_v, connector.w, d_proj, grads.w, {}, dz_v);
}

struct HeadTrace {
  Vector hidden;  // tanh activations
  double score = 0.0;
};

// Score in (0, 1); consumes the pre-projection visual feature.
inline double predict_score(std::span<const double> z_v, const ScoreHeadParams& head,
                            HeadTrace* trace = nullptr) {
  Vector hidden = linear_apply(z_v, head.hidden.w, head.hidden.b);
  for (double& h : hidden) h = std::tanh(h);
  const Vector logit = linear_apply(hidden, head.out.w, head.out.b);
  const double score = std::clamp(sigmoid(logit[0]), 1e-15, 1.0 - 1e-15);
  if (trace) {
    trace->hidden = std::move(hidden);
    trace->score = score;
  }
  return score;
}

inline void predict_score_backward(const HeadTrace& trace, std::span<const double> z_v,
                                   const ScoreHeadParams& head, double d_score,
                                   ScoreHeadParams& grads, std::span<double> dz_v) {
  const double d_logit = d_score * trace.score * (1.0 - trace.score);
  Vector d_hidden(trace.hidden.size(), 0.0);
  const Vector d_logit_vec{d_logit};
  linear_backward_acc(trace.hidden, head.out.w, d_logit_vec, grads.out.w, grads.out.b, d_hidden);
  for (std::size_t i = 0; i < d_hidden.size(); ++i) {
    const double h = trace.hidden[i];
    d_hidden[i] *= 1.0 - h * h;
  }
  linear_backward_acc(z_v, head.hidden.w, d_hidden, grads.hidden.w, grads.hidden.b, dz_v);
}

}  // namespace d2s
