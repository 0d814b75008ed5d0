#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2s/alignment.hpp"
#include "d2s/encoders.hpp"
#include "d2s/errors.hpp"
#include "d2s/synthdata.hpp"

namespace d2s {

// Table of the five ablation cases:
//   (a) mean pooling, no alignment      (b) attention pooling only
//   (c) + entropy alignment             (d) + feature alignment
//   (e) everything
struct AblationFlags {
  bool attn_pool = true;
  bool eal = true;
  bool fal = true;

  static AblationFlags for_case(char c) {
    switch (c) {
      case 'a': return {false, false, false};
      case 'b': return {true, false, false};
      case 'c': return {true, true, false};
      case 'd': return {true, false, true};
      case 'e': return {true, true, true};
      default: throw ConfigError(std::string("unknown ablation case: ") + c);
    }
  }
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr0 = 1e-3;
  double lr_min = 2.5e-6;
  double weight_decay = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  AlignmentConfig alignment;
  EncoderConfig encoder;
  AblationFlags ablation;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(lr0 > 0.0) || !(lr_min > 0.0) || lr0 < lr_min) {
      throw ConfigError("learning rates must satisfy lr0 >= lr_min > 0");
    }
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0) ||
        !(adam_eps > 0.0)) {
      throw ConfigError("adam hyperparameters out of range");
    }
    alignment.validate();
    encoder.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. The file schema mirrors the struct nesting:
//   data.{seed,count,train_path,test_path,gen.*}
//   model.{grid,patch,d_token,d_hidden,d_visual,d_text,vocab}
//   train.{epochs,batch_size,lr0,lr_min,weight_decay,seed}
//   alignment.{buffer_capacity,momentum,refresh_step,temperature,lambda,gamma,alpha,beta}
//   ablation.{attn_pool,eal,fal,cases}
//   eval.{checkpoint,data}   infer.{checkpoint,data}
// ---------------------------------------------------------------------------

struct DataSection {
  std::uint64_t seed = 42;
  std::size_t count = 1000;
  std::uint64_t test_seed = 43;
  std::size_t test_count = 500;
  std::string train_path;
  std::string test_path;
  GenConfig gen;
};

struct AppConfig {
  DataSection data;
  TrainConfig train;
  std::string ablation_cases = "abcde";
  std::string eval_checkpoint;
  std::string eval_data;
  std::string infer_checkpoint;
  std::string infer_data;
};

namespace detail {

template <class T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void from_json_section(const nlohmann::json& j, GenConfig& g) {
  detail::get_if_present(j, "grid", g.grid);
  detail::get_if_present(j, "patch", g.patch);
  detail::get_if_present(j, "max_objects", g.max_objects);
  detail::get_if_present(j, "categories", g.categories);
  detail::get_if_present(j, "backgrounds", g.backgrounds);
  detail::get_if_present(j, "w_count", g.w_count);
  detail::get_if_present(j, "w_category", g.w_category);
  detail::get_if_present(j, "w_noise", g.w_noise);
}

inline nlohmann::json to_json_section(const GenConfig& g) {
  return {{"grid", g.grid},           {"patch", g.patch},
          {"max_objects", g.max_objects}, {"categories", g.categories},
          {"backgrounds", g.backgrounds}, {"w_count", g.w_count},
          {"w_category", g.w_category},   {"w_noise", g.w_noise}};
}

inline AppConfig parse_app_config(const nlohmann::json& j) {
  AppConfig cfg;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::get_if_present(d, "seed", cfg.data.seed);
      detail::get_if_present(d, "count", cfg.data.count);
      detail::get_if_present(d, "test_seed", cfg.data.test_seed);
      detail::get_if_present(d, "test_count", cfg.data.test_count);
      detail::get_if_present(d, "train_path", cfg.data.train_path);
      detail::get_if_present(d, "test_path", cfg.data.test_path);
      if (d.contains("gen")) from_json_section(d.at("gen"), cfg.data.gen);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      auto& e = cfg.train.encoder;
      detail::get_if_present(m, "grid", e.grid);
      detail::get_if_present(m, "patch", e.patch);
      detail::get_if_present(m, "d_token", e.d_token);
      detail::get_if_present(m, "d_hidden", e.d_hidden);
      detail::get_if_present(m, "d_visual", e.d_visual);
      detail::get_if_present(m, "d_text", e.d_text);
      detail::get_if_present(m, "vocab", e.vocab);
      detail::get_if_present(m, "text_scale", e.text_scale);
      detail::get_if_present(m, "text_seed", e.text_seed);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::get_if_present(t, "epochs", cfg.train.epochs);
      detail::get_if_present(t, "batch_size", cfg.train.batch_size);
      detail::get_if_present(t, "lr0", cfg.train.lr0);
      detail::get_if_present(t, "lr_min", cfg.train.lr_min);
      detail::get_if_present(t, "weight_decay", cfg.train.weight_decay);
      detail::get_if_present(t, "adam_beta1", cfg.train.adam_beta1);
      detail::get_if_present(t, "adam_beta2", cfg.train.adam_beta2);
      detail::get_if_present(t, "adam_eps", cfg.train.adam_eps);
      detail::get_if_present(t, "seed", cfg.train.seed);
    }
    if (j.contains("alignment")) {
      const auto& a = j.at("alignment");
      auto& al = cfg.train.alignment;
      detail::get_if_present(a, "buffer_capacity", al.buffer_capacity);
      detail::get_if_present(a, "momentum", al.momentum);
      detail::get_if_present(a, "refresh_step", al.refresh_step);
      detail::get_if_present(a, "temperature", al.temperature);
      detail::get_if_present(a, "lambda", al.lambda);
      detail::get_if_present(a, "gamma", al.gamma);
      detail::get_if_present(a, "alpha", al.alpha);
      detail::get_if_present(a, "beta", al.beta);
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      detail::get_if_present(a, "attn_pool", cfg.train.ablation.attn_pool);
      detail::get_if_present(a, "eal", cfg.train.ablation.eal);
      detail::get_if_present(a, "fal", cfg.train.ablation.fal);
      detail::get_if_present(a, "cases", cfg.ablation_cases);
    }
    if (j.contains("eval")) {
      detail::get_if_present(j.at("eval"), "checkpoint", cfg.eval_checkpoint);
      detail::get_if_present(j.at("eval"), "data", cfg.eval_data);
    }
    if (j.contains("infer")) {
      detail::get_if_present(j.at("infer"), "checkpoint", cfg.infer_checkpoint);
      detail::get_if_present(j.at("infer"), "data", cfg.infer_data);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  // The caption vocabulary follows the generator layout unless pinned
  // explicitly in the model section.
  if (!j.contains("model") || !j.at("model").contains("vocab")) {
    cfg.train.encoder.vocab = cfg.data.gen.vocab_size();
  }
  // Keep the encoder grid in lockstep with the generator by default.
  if (!j.contains("model") || !j.at("model").contains("grid")) {
    cfg.train.encoder.grid = cfg.data.gen.grid;
  }
  if (!j.contains("model") || !j.at("model").contains("patch")) {
    cfg.train.encoder.patch = cfg.data.gen.patch;
  }
  return cfg;
}

inline nlohmann::json app_config_to_json(const AppConfig& cfg) {
  const auto& t = cfg.train;
  return nlohmann::json{
      {"data",
       {{"seed", cfg.data.seed},
        {"count", cfg.data.count},
        {"test_seed", cfg.data.test_seed},
        {"test_count", cfg.data.test_count},
        {"train_path", cfg.data.train_path},
        {"test_path", cfg.data.test_path},
        {"gen", to_json_section(cfg.data.gen)}}},
      {"model",
       {{"grid", t.encoder.grid},
        {"patch", t.encoder.patch},
        {"d_token", t.encoder.d_token},
        {"d_hidden", t.encoder.d_hidden},
        {"d_visual", t.encoder.d_visual},
        {"d_text", t.encoder.d_text},
        {"vocab", t.encoder.vocab},
        {"text_scale", t.encoder.text_scale},
        {"text_seed", t.encoder.text_seed}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr0", t.lr0},
        {"lr_min", t.lr_min},
        {"weight_decay", t.weight_decay},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"seed", t.seed}}},
      {"alignment",
       {{"buffer_capacity", t.alignment.buffer_capacity},
        {"momentum", t.alignment.momentum},
        {"refresh_step", t.alignment.refresh_step},
        {"temperature", t.alignment.temperature},
        {"lambda", t.alignment.lambda},
        {"gamma", t.alignment.gamma},
        {"alpha", t.alignment.alpha},
        {"beta", t.alignment.beta}}},
      {"ablation",
       {{"attn_pool", t.ablation.attn_pool},
        {"eal", t.ablation.eal},
        {"fal", t.ablation.fal},
        {"cases", cfg.ablation_cases}}},
      {"eval", {{"checkpoint", cfg.eval_checkpoint}, {"data", cfg.eval_data}}},
      {"infer", {{"checkpoint", cfg.infer_checkpoint}, {"data", cfg.infer_data}}}};
}

// Faithful dump of a training configuration; used for checkpoint config
// echoes and run directories.
inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return nlohmann::json{
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr0", t.lr0},
      {"lr_min", t.lr_min},
      {"weight_decay", t.weight_decay},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"adam_eps", t.adam_eps},
      {"seed", t.seed},
      {"alignment",
       {{"buffer_capacity", t.alignment.buffer_capacity},
        {"momentum", t.alignment.momentum},
        {"refresh_step", t.alignment.refresh_step},
        {"temperature", t.alignment.temperature},
        {"lambda", t.alignment.lambda},
        {"gamma", t.alignment.gamma},
        {"alpha", t.alignment.alpha},
        {"beta", t.alignment.beta}}},
      {"encoder",
       {{"grid", t.encoder.grid},
        {"patch", t.encoder.patch},
        {"d_token", t.encoder.d_token},
        {"d_hidden", t.encoder.d_hidden},
        {"d_visual", t.encoder.d_visual},
        {"d_text", t.encoder.d_text},
        {"vocab", t.encoder.vocab},
        {"text_scale", t.encoder.text_scale},
        {"text_seed", t.encoder.text_seed}}},
      {"ablation",
       {{"attn_pool", t.ablation.attn_pool},
        {"eal", t.ablation.eal},
        {"fal", t.ablation.fal}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  try {
    detail::get_if_present(j, "epochs", t.epochs);
    detail::get_if_present(j, "batch_size", t.batch_size);
    detail::get_if_present(j, "lr0", t.lr0);
    detail::get_if_present(j, "lr_min", t.lr_min);
    detail::get_if_present(j, "weight_decay", t.weight_decay);
    detail::get_if_present(j, "adam_beta1", t.adam_beta1);
    detail::get_if_present(j, "adam_beta2", t.adam_beta2);
    detail::get_if_present(j, "adam_eps", t.adam_eps);
    detail::get_if_present(j, "seed", t.seed);
    if (j.contains("alignment")) {
      const auto& a = j.at("alignment");
      detail::get_if_present(a, "buffer_capacity", t.alignment.buffer_capacity);
      detail::get_if_present(a, "momentum", t.alignment.momentum);
      detail::get_if_present(a, "refresh_step", t.alignment.refresh_step);
      detail::get_if_present(a, "temperature", t.alignment.temperature);
      detail::get_if_present(a, "lambda", t.alignment.lambda);
      detail::get_if_present(a, "gamma", t.alignment.gamma);
      detail::get_if_present(a, "alpha", t.alignment.alpha);
      detail::get_if_present(a, "beta", t.alignment.beta);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      detail::get_if_present(e, "grid", t.encoder.grid);
      detail::get_if_present(e, "patch", t.encoder.patch);
      detail::get_if_present(e, "d_token", t.encoder.d_token);
      detail::get_if_present(e, "d_hidden", t.encoder.d_hidden);
      detail::get_if_present(e, "d_visual", t.encoder.d_visual);
      detail::get_if_present(e, "d_text", t.encoder.d_text);
      detail::get_if_present(e, "vocab", t.encoder.vocab);
      detail::get_if_present(e, "text_scale", t.encoder.text_scale);
      detail::get_if_present(e, "text_seed", t.encoder.text_seed);
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      detail::get_if_present(a, "attn_pool", t.ablation.attn_pool);
      detail::get_if_present(a, "eal", t.ablation.eal);
      detail::get_if_present(a, "fal", t.ablation.fal);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
  return t;
}

inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  return j;
}

// Applies "a.b.c=value" onto a JSON document. The value is parsed as JSON
// when possible (numbers, booleans) and falls back to a plain string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  const std::string key_path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key_path.find('.', start);
    const std::string part = key_path.substr(start, dot - start);
    if (part.empty()) throw ConfigError("empty key segment in override: " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace d2s
