#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "d2s/alignment.hpp"
#include "d2s/config.hpp"
#include "d2s/encoders.hpp"
#include "d2s/errors.hpp"
#include "d2s/gradcheck.hpp"
#include "d2s/metrics.hpp"
#include "d2s/model.hpp"
#include "d2s/optim.hpp"
#include "d2s/synthdata.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

struct IterationLog {
  std::uint64_t iter = 0;
  double lr = 0.0;
  double mse = 0.0;
  double eal = 0.0;
  double fal = 0.0;
  double total = 0.0;
  std::size_t buf_v = 0;
  std::size_t buf_s = 0;
};

inline std::string iteration_log_csv_header() {
  return "iter,lr,L_mse,L_eal,L_fal,L_total,buf_v,buf_s";
}

inline std::string iteration_log_csv_row(const IterationLog& row) {
  std::ostringstream out;
  out.precision(17);
  out << row.iter << ',' << row.lr << ',' << row.mse << ',' << row.eal << ',' << row.fal << ','
      << row.total << ',' << row.buf_v << ',' << row.buf_s;
  return out.str();
}

// Buffer-level energy distance at the gate iteration and at the end of the
// run; the before/after view of entropy-distribution alignment.
struct AlignmentDiagnostics {
  std::int64_t gate_iteration = -1;
  double buffer_energy_at_gate = std::numeric_limits<double>::quiet_NaN();
  double buffer_energy_final = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------------------
// Composite objective on one mini-batch. Shared by the training loop and the
// gradient-check harness so there is exactly one forward/backward path.
// ---------------------------------------------------------------------------

struct BatchSample {
  std::span<const double> image;
  double target = 0.0;             // ground-truth complexity
  const Vector* text_embedding = nullptr;  // cached caption embedding
  double text_entropy = 0.0;       // cached caption-feature entropy
};

struct CompositeLossResult {
  double mse = 0.0;
  double eal = 0.0;
  double fal = 0.0;
  double total = 0.0;
  std::vector<double> predictions;
  ModelParams grads;
};

// buffer_v / buffer_s hold detached entropy snapshots; only the live batch
// terms carry gradient. `eal_active` reflects the half-capacity gate.
inline CompositeLossResult composite_loss(const ModelParams& model, const EncoderConfig& enc,
                                          const AblationFlags& flags,
                                          const AlignmentConfig& align,
                                          std::span<const BatchSample> batch,
                                          std::span<const double> buffer_v,
                                          std::span<const double> buffer_s, bool eal_active) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = batch.size();
  const PoolMode pool = flags.attn_pool ? PoolMode::kAttention : PoolMode::kMean;

  CompositeLossResult result;
  result.grads = make_grads(model);
  result.predictions.resize(n);

  std::vector<VisionTrace> traces(n);
  std::vector<HeadTrace> head_traces(n);
  std::vector<Vector> z_v(n);
  for (std::size_t i = 0; i < n; ++i) {
    z_v[i] = encode_image(batch[i].image, model.vision, enc, pool, &traces[i]);
    require_finite(z_v[i], "visual feature");
    result.predictions[i] = predict_score(z_v[i], model.head, &head_traces[i]);
  }

  double mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = result.predictions[i] - batch[i].target;
    mse += d * d;
  }
  result.mse = mse / static_cast<double>(n);

  FeatureAlignmentResult fal;
  std::vector<Vector> projected;
  if (flags.fal) {
    projected.resize(n);
    std::vector<Vector> text_rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      projected[i] = project_visual(z_v[i], model.connector);
      text_rows[i] = *batch[i].text_embedding;
    }
    fal = fal_loss(projected, text_rows, align.temperature);
    result.fal = fal.value;
  }

  EnergyDistanceResult eal;
  if (eal_active) {
    Vector v_all(buffer_v.begin(), buffer_v.end());
    Vector s_all(buffer_s.begin(), buffer_s.end());
    for (std::size_t i = 0; i < n; ++i) v_all.push_back(feature_entropy(z_v[i]));
    for (std::size_t i = 0; i < n; ++i) s_all.push_back(batch[i].text_entropy);
    eal = eal_loss(v_all, s_all);
    result.eal = eal.value;
  }

  result.total = total_loss(result.mse, result.eal, result.fal, align.lambda, align.gamma);

  // Backward: collect dL/dz_v per sample, then run the encoder backward once.
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector dz(z_v[i].size(), 0.0);
    const double d_pred = 2.0 * (result.predictions[i] - batch[i].target) * inv_n;
    predict_score_backward(head_traces[i], z_v[i], model.head, d_pred, result.grads.head, dz);

    if (flags.fal) {
      Vector d_proj(fal.grad_visual[i].size());
      for (std::size_t k = 0; k < d_proj.size(); ++k) {
        d_proj[k] = align.gamma * fal.grad_visual[i][k];
      }
      project_visual_backward(z_v[i], model.connector, d_proj, result.grads.connector, dz);
    }

    if (eal_active) {
      const double d_entropy = align.lambda * eal.grad_v[buffer_v.size() + i];
      const Vector h_grad = feature_entropy_grad(z_v[i]);
      axpy(d_entropy, h_grad, dz);
    }

    encode_image_backward(traces[i], model.vision, dz, pool, result.grads.vision);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  ModelParams model;
  TextEmbedderParams text;
  ModelParams momentum_params;
  AdamState adam;
  std::uint64_t step = 0;
  std::vector<BufferEntry> buffer_v_entries;
  std::vector<BufferEntry> buffer_s_entries;
  std::uint64_t buffer_v_next = 0;
  std::uint64_t buffer_s_next = 0;
};

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor2D& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}};
}

inline Tensor2D tensor_from_json(const nlohmann::json& j) {
  return Tensor2D(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<Vector>());
}

inline nlohmann::json linear_to_json(const Linear& l) {
  return {{"w", tensor_to_json(l.w)}, {"b", l.b}};
}

inline Linear linear_from_json(const nlohmann::json& j) {
  return {tensor_from_json(j.at("w")), j.at("b").get<Vector>()};
}

inline nlohmann::json model_to_json(const ModelParams& m) {
  return {{"vision",
           {{"patch_embed", linear_to_json(m.vision.patch_embed)},
            {"mlp_in", linear_to_json(m.vision.mlp_in)},
            {"mlp_out", linear_to_json(m.vision.mlp_out)},
            {"pool_query", m.vision.pool_query},
            {"out_proj", linear_to_json(m.vision.out_proj)}}},
          {"connector", tensor_to_json(m.connector.w)},
          {"head",
           {{"hidden", linear_to_json(m.head.hidden)}, {"out", linear_to_json(m.head.out)}}}};
}

inline ModelParams model_from_json(const nlohmann::json& j) {
  ModelParams m;
  const auto& v = j.at("vision");
  m.vision.patch_embed = linear_from_json(v.at("patch_embed"));
  m.vision.mlp_in = linear_from_json(v.at("mlp_in"));
  m.vision.mlp_out = linear_from_json(v.at("mlp_out"));
  m.vision.pool_query = v.at("pool_query").get<Vector>();
  m.vision.out_proj = linear_from_json(v.at("out_proj"));
  m.connector.w = tensor_from_json(j.at("connector"));
  m.head.hidden = linear_from_json(j.at("head").at("hidden"));
  m.head.out = linear_from_json(j.at("head").at("out"));
  return m;
}

inline nlohmann::json buffer_entries_to_json(const std::vector<BufferEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.sample_id}, {"h", e.entropy}, {"idx", e.insertion_index}});
  }
  return arr;
}

inline std::vector<BufferEntry> buffer_entries_from_json(const nlohmann::json& arr) {
  std::vector<BufferEntry> entries;
  for (const auto& e : arr) {
    entries.push_back({e.at("id").get<std::uint64_t>(), e.at("h").get<double>(),
                       e.at("idx").get<std::uint64_t>()});
  }
  return entries;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  return {{"config", train_config_to_json(ck.config)},
          {"step", ck.step},
          {"model", detail::model_to_json(ck.model)},
          {"text",
           {{"token_table", detail::tensor_to_json(ck.text.token_table)},
            {"mix", detail::linear_to_json(ck.text.mix)}}},
          {"momentum", detail::model_to_json(ck.momentum_params)},
          {"adam",
           {{"m", ck.adam.first_moment},
            {"v", ck.adam.second_moment},
            {"step_count", ck.adam.step_count}}},
          {"buffer_v",
           {{"entries", detail::buffer_entries_to_json(ck.buffer_v_entries)},
            {"next", ck.buffer_v_next}}},
          {"buffer_s",
           {{"entries", detail::buffer_entries_to_json(ck.buffer_s_entries)},
            {"next", ck.buffer_s_next}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  ck.config = train_config_from_json(j.at("config"));
  ck.step = j.at("step").get<std::uint64_t>();
  ck.model = detail::model_from_json(j.at("model"));
  ck.text.token_table = detail::tensor_from_json(j.at("text").at("token_table"));
  ck.text.mix = detail::linear_from_json(j.at("text").at("mix"));
  ck.momentum_params = detail::model_from_json(j.at("momentum"));
  ck.adam.first_moment = j.at("adam").at("m").get<Vector>();
  ck.adam.second_moment = j.at("adam").at("v").get<Vector>();
  ck.adam.step_count = j.at("adam").at("step_count").get<std::uint64_t>();
  ck.buffer_v_entries = detail::buffer_entries_from_json(j.at("buffer_v").at("entries"));
  ck.buffer_v_next = j.at("buffer_v").at("next").get<std::uint64_t>();
  ck.buffer_s_entries = detail::buffer_entries_from_json(j.at("buffer_s").at("entries"));
  ck.buffer_s_next = j.at("buffer_s").at("next").get<std::uint64_t>();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << checkpoint_to_json(ck).dump();
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("checkpoint is not valid JSON: " + path);
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Trainer: strictly sequential mini-batch loop with momentum model and
// entropy buffers. Order of one iteration: momentum-model inference,
// buffer push, gate, losses, optimizer step, EMA update, buffer refresh.
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data)
      : cfg_(std::move(cfg)),
        data_(&data),
        buf_v_(cfg_.alignment.buffer_capacity),
        buf_s_(cfg_.alignment.buffer_capacity) {
    cfg_.validate();
    validate_dataset();
    const Prng root(cfg_.seed);
    model_ = init_model(cfg_.encoder, root);
    text_ = init_text_embedder(cfg_.encoder, Prng(cfg_.encoder.text_seed).stream("text-embedder"));
    mom_ = {model_, cfg_.alignment.momentum};
    adam_ = AdamState(param_count(model_));
    init_schedule();
    cache_captions();
  }

  Trainer(const Checkpoint& ck, const Dataset& data)
      : cfg_(ck.config),
        data_(&data),
        buf_v_(cfg_.alignment.buffer_capacity),
        buf_s_(cfg_.alignment.buffer_capacity) {
    cfg_.validate();
    validate_dataset();
    model_ = ck.model;
    text_ = ck.text;
    mom_ = {ck.momentum_params, cfg_.alignment.momentum};
    adam_ = ck.adam;
    step_ = ck.step;
    buf_v_.restore(ck.buffer_v_entries, ck.buffer_v_next);
    buf_s_.restore(ck.buffer_s_entries, ck.buffer_s_next);
    init_schedule();
    cache_captions();
  }

  bool done() const { return step_ >= total_steps_; }
  std::uint64_t step_count() const { return step_; }
  std::uint64_t total_steps() const { return total_steps_; }
  const std::vector<IterationLog>& log() const { return log_; }
  const AlignmentDiagnostics& diagnostics() const { return diagnostics_; }
  const ModelParams& model() const { return model_; }
  const TextEmbedderParams& text() const { return text_; }
  const EntropyBuffer& buffer_v() const { return buf_v_; }
  const EntropyBuffer& buffer_s() const { return buf_s_; }
  const std::vector<Vector>& caption_embeddings() const { return caption_embeddings_; }

  void step() {
    if (done()) throw std::logic_error("training horizon already reached");
    const std::size_t epoch = step_ / iters_per_epoch_;
    if (epoch != order_epoch_) shuffle_epoch(epoch);
    const std::size_t it = step_ % iters_per_epoch_;
    const std::size_t lo = it * cfg_.batch_size;
    const std::size_t hi = std::min(lo + cfg_.batch_size, data_->size());
    const PoolMode pool = cfg_.ablation.attn_pool ? PoolMode::kAttention : PoolMode::kMean;

    // Momentum-model inference feeds the buffers; oldest entries roll off.
    std::vector<std::pair<std::uint64_t, double>> entries_v, entries_s;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t idx = order_[k];
      const Vector z = encode_image((*data_)[idx].image, mom_.params.vision, cfg_.encoder, pool);
      entries_v.emplace_back(idx, feature_entropy(z));
      entries_s.emplace_back(idx, caption_entropies_[idx]);
    }
    buf_v_.push(entries_v);
    buf_s_.push(entries_s);

    const bool eal_active =
        cfg_.ablation.eal && eal_ready(buf_v_, buf_s_, cfg_.alignment.buffer_capacity);
    if (eal_active && diagnostics_.gate_iteration < 0) {
      diagnostics_.gate_iteration = static_cast<std::int64_t>(step_);
      diagnostics_.buffer_energy_at_gate = eal_loss(buf_v_.values(), buf_s_.values()).value;
    }

    std::vector<BatchSample> batch;
    batch.reserve(hi - lo);
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t idx = order_[k];
      batch.push_back({(*data_)[idx].image, (*data_)[idx].gt, &caption_embeddings_[idx],
                       caption_entropies_[idx]});
    }

    const CompositeLossResult res =
        composite_loss(model_, cfg_.encoder, cfg_.ablation, cfg_.alignment, batch,
                       buf_v_.values(), buf_s_.values(), eal_active);

    const double lr = cosine_lr(step_, total_steps_, cfg_.lr0, cfg_.lr_min);
    Vector flat = flatten_params(model_);
    const Vector grad_flat = flatten_params(res.grads);
    adam_step(flat, grad_flat, adam_,
              {lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps, cfg_.weight_decay});
    unflatten_params(flat, model_);

    mom_.ema_update(model_);

    buffer_refresh(
        buf_v_,
        [&](std::uint64_t id) -> std::optional<double> {
          if (id >= data_->size()) return std::nullopt;
          return feature_entropy(
              encode_image((*data_)[id].image, mom_.params.vision, cfg_.encoder, pool));
        },
        cfg_.alignment.refresh_step);
    buffer_refresh(
        buf_s_,
        [&](std::uint64_t id) -> std::optional<double> {
          if (id >= data_->size()) return std::nullopt;
          return caption_entropies_[id];  // text path is frozen
        },
        cfg_.alignment.refresh_step);

    log_.push_back({step_, lr, res.mse, res.eal, res.fal, res.total, buf_v_.size(), buf_s_.size()});
    ++step_;
    if (done() && diagnostics_.gate_iteration >= 0) {
      diagnostics_.buffer_energy_final = eal_loss(buf_v_.values(), buf_s_.values()).value;
    }
  }

  void run() {
    while (!done()) step();
  }

  Checkpoint make_checkpoint() const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.model = model_;
    ck.text = text_;
    ck.momentum_params = mom_.params;
    ck.adam = adam_;
    ck.step = step_;
    ck.buffer_v_entries.assign(buf_v_.entries().begin(), buf_v_.entries().end());
    ck.buffer_s_entries.assign(buf_s_.entries().begin(), buf_s_.entries().end());
    ck.buffer_v_next = buf_v_.next_insertion_index();
    ck.buffer_s_next = buf_s_.next_insertion_index();
    return ck;
  }

 private:
  void validate_dataset() const {
    if (data_->empty()) throw ConfigError("empty dataset");
    const std::size_t pixels = cfg_.encoder.grid * cfg_.encoder.grid;
    for (const auto& s : *data_) {
      if (s.image.size() != pixels) {
        throw ConfigError("dataset/config mismatch: image has " +
                          std::to_string(s.image.size()) + " pixels, expected " +
                          std::to_string(pixels));
      }
      for (std::size_t id : s.caption) {
        if (id >= cfg_.encoder.vocab) {
          throw ConfigError("dataset/config mismatch: caption token " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(cfg_.encoder.vocab));
        }
      }
    }
  }

  void init_schedule() {
    iters_per_epoch_ = (data_->size() + cfg_.batch_size - 1) / cfg_.batch_size;
    total_steps_ = cfg_.epochs * iters_per_epoch_;
  }

  // Caption embeddings never change; compute once per dataset.
  void cache_captions() {
    caption_embeddings_.resize(data_->size());
    caption_entropies_.resize(data_->size());
    for (std::size_t i = 0; i < data_->size(); ++i) {
      caption_embeddings_[i] = embed_caption((*data_)[i].caption, text_);
      caption_entropies_[i] = feature_entropy(caption_embeddings_[i]);
    }
  }

  // Epoch order depends only on (seed, epoch), never on ablation flags.
  void shuffle_epoch(std::size_t epoch) {
    order_.resize(data_->size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Prng rng = Prng(cfg_.seed).stream("shuffle").stream(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
    order_epoch_ = epoch;
  }

  TrainConfig cfg_;
  const Dataset* data_;
  ModelParams model_;
  TextEmbedderParams text_;
  MomentumModel mom_;
  AdamState adam_;
  EntropyBuffer buf_v_;
  EntropyBuffer buf_s_;
  std::vector<Vector> caption_embeddings_;
  Vector caption_entropies_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = std::numeric_limits<std::size_t>::max();
  std::uint64_t step_ = 0;
  std::uint64_t total_steps_ = 0;
  std::size_t iters_per_epoch_ = 1;
  std::vector<IterationLog> log_;
  AlignmentDiagnostics diagnostics_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<IterationLog> log;
  AlignmentDiagnostics diagnostics;
};

inline TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  Trainer trainer(cfg, data);
  trainer.run();
  return {trainer.make_checkpoint(), trainer.log(), trainer.diagnostics()};
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline void write_run_artifacts(const std::string& run_dir, const Trainer& trainer) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory: " + run_dir);

  std::ostringstream log_csv;
  log_csv << iteration_log_csv_header() << '\n';
  for (const auto& row : trainer.log()) log_csv << iteration_log_csv_row(row) << '\n';
  write_text_file(run_dir + "/log.csv", log_csv.str());

  const auto& diag = trainer.diagnostics();
  const nlohmann::json dj = {{"gate_iteration", diag.gate_iteration},
                             {"buffer_energy_at_gate", diag.buffer_energy_at_gate},
                             {"buffer_energy_final", diag.buffer_energy_final}};
  write_text_file(run_dir + "/diagnostics.json", dj.dump(2));

  std::ostringstream cache;
  for (std::size_t i = 0; i < trainer.caption_embeddings().size(); ++i) {
    cache << nlohmann::json{{"id", i}, {"embedding", trainer.caption_embeddings()[i]}}.dump()
          << '\n';
  }
  write_text_file(run_dir + "/caption_cache.jsonl", cache.str());
}

}  // namespace detail

// Trains and writes the run directory: config echo, per-iteration CSV log,
// checkpoint, diagnostics, caption cache. On numerical failure the state of
// the last completed iteration is saved before the error propagates.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& run_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory: " + run_dir);
  detail::write_text_file(run_dir + "/config.json", train_config_to_json(cfg).dump(2) + "\n");

  Trainer trainer(cfg, data);
  Checkpoint last_good = trainer.make_checkpoint();
  try {
    while (!trainer.done()) {
      last_good = trainer.make_checkpoint();
      trainer.step();
    }
  } catch (const NumericalError&) {
    save_checkpoint(last_good, run_dir + "/checkpoint_last_good.json");
    detail::write_run_artifacts(run_dir, trainer);
    throw;
  }

  save_checkpoint(trainer.make_checkpoint(), run_dir + "/checkpoint.json");
  detail::write_run_artifacts(run_dir, trainer);
  return {trainer.make_checkpoint(), trainer.log(), trainer.diagnostics()};
}

// ---------------------------------------------------------------------------
// Inference and evaluation. Only the vision branch and the score head are
// touched; connector, text table, momentum model and buffers are dead weight
// in a checkpoint at this point.
// ---------------------------------------------------------------------------

inline std::vector<double> infer(const Checkpoint& ck, const std::vector<Vector>& images) {
  const PoolMode pool = ck.config.ablation.attn_pool ? PoolMode::kAttention : PoolMode::kMean;
  std::vector<double> scores;
  scores.reserve(images.size());
  for (const auto& image : images) {
    const Vector z = encode_image(image, ck.model.vision, ck.config.encoder, pool);
    scores.push_back(predict_score(z, ck.model.head));
  }
  return scores;
}

inline std::vector<Vector> collect_visual_features(const Checkpoint& ck, const Dataset& data) {
  const PoolMode pool = ck.config.ablation.attn_pool ? PoolMode::kAttention : PoolMode::kMean;
  std::vector<Vector> features;
  features.reserve(data.size());
  for (const auto& s : data) {
    features.push_back(encode_image(s.image, ck.model.vision, ck.config.encoder, pool));
  }
  return features;
}

inline MetricsReport evaluate(const Checkpoint& ck, const Dataset& data) {
  std::vector<Vector> images;
  images.reserve(data.size());
  Vector targets;
  targets.reserve(data.size());
  for (const auto& s : data) {
    images.push_back(s.image);
    targets.push_back(s.gt);
  }
  const std::vector<double> scores = infer(ck, images);
  return compute_metrics(targets, scores);
}

// ---------------------------------------------------------------------------
// Ablation sweep: identical seeds and data order across cases.
// ---------------------------------------------------------------------------

struct AblationRow {
  char case_id = 'e';
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct AblationCaseSummary {
  char case_id = 'e';
  MetricsReport mean;
  MetricsReport stddev;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<AblationCaseSummary> cases;

  std::string runs_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "case,seed," << metrics_csv_header() << '\n';
    for (const auto& r : rows) {
      out << r.case_id << ',' << r.seed << ',' << metrics_csv_row(r.metrics) << '\n';
    }
    return out.str();
  }

  std::string summary_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "case,srcc_mean,srcc_std,pcc_mean,pcc_std,rmse_mean,rmse_std,rmae_mean,rmae_std\n";
    for (const auto& c : cases) {
      out << c.case_id << ',' << c.mean.srcc << ',' << c.stddev.srcc << ',' << c.mean.pcc << ','
          << c.stddev.pcc << ',' << c.mean.rmse << ',' << c.stddev.rmse << ',' << c.mean.rmae
          << ',' << c.stddev.rmae << '\n';
    }
    return out.str();
  }

  std::string summary_text() const {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed;
    out << "case   srcc            pcc             rmse            rmae\n";
    for (const auto& c : cases) {
      out << "(" << c.case_id << ")    " << c.mean.srcc << " ±" << c.stddev.srcc << "  "
          << c.mean.pcc << " ±" << c.stddev.pcc << "  " << c.mean.rmse << " ±" << c.stddev.rmse
          << "  " << c.mean.rmae << " ±" << c.stddev.rmae << '\n';
    }
    return out.str();
  }
};

// Runs cases x seeds with identical data order everywhere. When
// `run_dir_base` is set, each run writes its artifacts under
// <base>/case_<c>/seed_<s>/.
inline AblationReport ablate(const TrainConfig& base, const Dataset& train_data,
                             const Dataset& test_data, const std::string& cases,
                             const std::vector<std::uint64_t>& seeds,
                             std::vector<TrainResult>* results_out = nullptr,
                             const std::string& run_dir_base = {}) {
  if (cases.empty()) throw ConfigError("no ablation cases requested");
  if (seeds.empty()) throw ConfigError("no seeds requested");

  AblationReport report;
  for (char c : cases) {
    std::vector<MetricsReport> per_seed;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.ablation = AblationFlags::for_case(c);
      cfg.seed = seed;
      const std::string run_dir =
          run_dir_base.empty()
              ? std::string{}
              : run_dir_base + "/case_" + std::string(1, c) + "/seed_" + std::to_string(seed);
      TrainResult result = run_dir.empty() ? train(cfg, train_data)
                                           : train(cfg, train_data, run_dir);
      const MetricsReport metrics = evaluate(result.checkpoint, test_data);
      if (!run_dir.empty()) {
        detail::write_text_file(run_dir + "/metrics.csv",
                                metrics_csv_header() + "\n" + metrics_csv_row(metrics) + "\n");
        detail::write_text_file(run_dir + "/metrics.txt", metrics_text(metrics));
      }
      report.rows.push_back({c, seed, metrics});
      per_seed.push_back(metrics);
      if (results_out) results_out->push_back(std::move(result));
    }

    AblationCaseSummary summary;
    summary.case_id = c;
    const auto n = static_cast<double>(per_seed.size());
    auto mean_of = [&](auto field) {
      double s = 0.0;
      for (const auto& m : per_seed) s += m.*field;
      return s / n;
    };
    auto std_of = [&](auto field, double mean) {
      if (per_seed.size() < 2) return 0.0;
      double s = 0.0;
      for (const auto& m : per_seed) {
        const double d = m.*field - mean;
        s += d * d;
      }
      return std::sqrt(s / (n - 1.0));
    };
    summary.mean.srcc = mean_of(&MetricsReport::srcc);
    summary.mean.pcc = mean_of(&MetricsReport::pcc);
    summary.mean.rmse = mean_of(&MetricsReport::rmse);
    summary.mean.rmae = mean_of(&MetricsReport::rmae);
    summary.mean.n = per_seed.front().n;
    summary.stddev.srcc = std_of(&MetricsReport::srcc, summary.mean.srcc);
    summary.stddev.pcc = std_of(&MetricsReport::pcc, summary.mean.pcc);
    summary.stddev.rmse = std_of(&MetricsReport::rmse, summary.mean.rmse);
    summary.stddev.rmae = std_of(&MetricsReport::rmae, summary.mean.rmae);
    report.cases.push_back(summary);
  }
  return report;
}

}  // namespace d2s
