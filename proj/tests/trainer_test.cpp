#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "d2s/trainer.hpp"

namespace {

using d2s::Vector;

d2s::GenConfig tiny_gen() {
  d2s::GenConfig gen;
  gen.grid = 16;
  gen.patch = 4;
  return gen;
}

d2s::TrainConfig tiny_config(const d2s::GenConfig& gen) {
  d2s::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr0 = 1e-3;
  cfg.alignment.buffer_capacity = 16;
  cfg.alignment.refresh_step = 4;
  cfg.alignment.lambda = 0.05;
  cfg.alignment.gamma = 0.01;
  cfg.encoder.grid = gen.grid;
  cfg.encoder.patch = gen.patch;
  cfg.encoder.d_token = 8;
  cfg.encoder.d_hidden = 12;
  cfg.encoder.d_visual = 8;
  cfg.encoder.d_text = 8;
  cfg.encoder.vocab = gen.vocab_size();
  return cfg;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir.string();
}

TEST(Train, CaseAReducesToPlainRegression) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(1, 40, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  cfg.ablation = d2s::AblationFlags::for_case('a');
  const d2s::TrainResult result = d2s::train(cfg, data);
  for (const auto& row : result.log) {
    EXPECT_DOUBLE_EQ(row.eal, 0.0);
    EXPECT_DOUBLE_EQ(row.fal, 0.0);
    EXPECT_DOUBLE_EQ(row.total, row.mse);
  }
}

TEST(Train, EalIsZeroUntilBothBuffersReachHalfCapacity) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(2, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);  // M=16, batch 4 -> gate at iter 1
  const d2s::TrainResult result = d2s::train(cfg, data);

  const std::size_t gate = (cfg.alignment.buffer_capacity + 1) / 2;
  bool seen_gate = false;
  for (const auto& row : result.log) {
    const bool gated = row.buf_v >= gate && row.buf_s >= gate;
    if (!gated) {
      EXPECT_DOUBLE_EQ(row.eal, 0.0) << "iter " << row.iter;
      EXPECT_FALSE(seen_gate);
    } else if (!seen_gate) {
      seen_gate = true;
      EXPECT_NE(row.eal, 0.0) << "first gated iteration " << row.iter;
      EXPECT_EQ(static_cast<std::int64_t>(row.iter), result.diagnostics.gate_iteration);
    }
  }
  EXPECT_TRUE(seen_gate);
}

TEST(Train, BufferOccupancyNeverExceedsCapacity) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(3, 50, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  const d2s::TrainResult result = d2s::train(cfg, data);
  for (const auto& row : result.log) {
    EXPECT_LE(row.buf_v, cfg.alignment.buffer_capacity);
    EXPECT_LE(row.buf_s, cfg.alignment.buffer_capacity);
  }
}

TEST(Train, LoggedTotalMatchesWeightedSum) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(4, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  const d2s::TrainResult result = d2s::train(cfg, data);
  for (const auto& row : result.log) {
    EXPECT_NEAR(row.total,
                row.mse + cfg.alignment.lambda * row.eal + cfg.alignment.gamma * row.fal, 1e-12);
  }
}

TEST(Train, SameSeedGivesBitIdenticalCheckpoints) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(5, 40, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  cfg.seed = 42;
  const d2s::Checkpoint a = d2s::train(cfg, data).checkpoint;
  const d2s::Checkpoint b = d2s::train(cfg, data).checkpoint;
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.momentum_params, b.momentum_params);
  EXPECT_EQ(a.adam.first_moment, b.adam.first_moment);
  EXPECT_EQ(a.adam.second_moment, b.adam.second_moment);
  EXPECT_EQ(a.buffer_v_entries, b.buffer_v_entries);
  EXPECT_EQ(a.step, b.step);
}

TEST(Train, TextEmbedderIsByteIdenticalAcrossTraining) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(6, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  d2s::Trainer trainer(cfg, data);
  const d2s::TextEmbedderParams before = trainer.text();
  trainer.run();
  EXPECT_EQ(trainer.text(), before);
}

// With an lr so small every update underflows the trainable parameters, the
// momentum model inside the real loop must follow the closed-form EMA. The
// momentum copy is displaced first so the recursion is actually exercised.
TEST(Train, MomentumModelMatchesClosedFormUnderFrozenParams) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(7, 40, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  cfg.lr0 = 1e-300;
  cfg.lr_min = 1e-300;
  cfg.weight_decay = 0.0;
  cfg.alignment.momentum = 0.995;

  d2s::Checkpoint start = d2s::Trainer(cfg, data).make_checkpoint();
  d2s::visit_params(start.momentum_params, [](Vector& v) {
    for (double& x : v) x = 0.5 * x + 0.1;
  });
  const Vector xi0 = d2s::flatten_params(start.momentum_params);
  const Vector theta0 = d2s::flatten_params(start.model);

  d2s::Trainer trainer(start, data);
  trainer.run();
  const Vector theta_end = d2s::flatten_params(trainer.model());
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    ASSERT_NEAR(theta_end[i], theta0[i], 1e-250);  // updates underflow
  }

  const Vector mom_end = d2s::flatten_params(trainer.make_checkpoint().momentum_params);
  const double mt = std::pow(0.995, static_cast<double>(trainer.step_count()));
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    EXPECT_NEAR(mom_end[i], mt * xi0[i] + (1.0 - mt) * theta0[i], 1e-12);
  }
}

TEST(Train, CheckpointResumeIsBitIdentical) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(8, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);

  d2s::Trainer uninterrupted(cfg, data);
  for (int i = 0; i < 7; ++i) uninterrupted.step();
  const d2s::Checkpoint mid = uninterrupted.make_checkpoint();
  uninterrupted.step();

  d2s::Trainer resumed(mid, data);
  resumed.step();

  EXPECT_EQ(d2s::flatten_params(uninterrupted.model()), d2s::flatten_params(resumed.model()));
  EXPECT_EQ(uninterrupted.make_checkpoint().adam.first_moment,
            resumed.make_checkpoint().adam.first_moment);
  EXPECT_EQ(uninterrupted.buffer_v().entries(), resumed.buffer_v().entries());
}

TEST(Train, CheckpointFileRoundTripIsBitIdentical) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(9, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);

  d2s::Trainer trainer(cfg, data);
  for (int i = 0; i < 5; ++i) trainer.step();
  const d2s::Checkpoint mid = trainer.make_checkpoint();
  const std::string path = (std::filesystem::temp_directory_path() / "d2s_ck.json").string();
  d2s::save_checkpoint(mid, path);
  const d2s::Checkpoint loaded = d2s::load_checkpoint(path);
  std::remove(path.c_str());

  EXPECT_EQ(loaded.model, mid.model);
  EXPECT_EQ(loaded.adam.first_moment, mid.adam.first_moment);
  EXPECT_EQ(loaded.buffer_v_entries, mid.buffer_v_entries);

  trainer.step();
  d2s::Trainer resumed(loaded, data);
  resumed.step();
  EXPECT_EQ(d2s::flatten_params(trainer.model()), d2s::flatten_params(resumed.model()));
}

TEST(Infer, RepeatedCallsAndOrderContract) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(10, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  const d2s::Checkpoint ck = d2s::train(cfg, data).checkpoint;

  std::vector<Vector> images;
  for (std::size_t i = 0; i < 5; ++i) images.push_back(data[i].image);
  const auto scores1 = d2s::infer(ck, images);
  const auto scores2 = d2s::infer(ck, images);
  EXPECT_EQ(scores1, scores2);
  ASSERT_EQ(scores1.size(), 5u);
  // order contract: each score matches the single-image call
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(scores1[i], d2s::infer(ck, {images[i]}).front());
  }
}

TEST(Infer, PredictionsIgnoreConnectorTextMomentumAndBuffers) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(11, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  const d2s::Checkpoint ck = d2s::train(cfg, data).checkpoint;

  std::vector<Vector> images;
  for (std::size_t i = 0; i < 8; ++i) images.push_back(data[i].image);
  const auto baseline = d2s::infer(ck, images);

  d2s::Checkpoint stripped = ck;
  std::fill(stripped.model.connector.w.data().begin(), stripped.model.connector.w.data().end(),
            0.0);
  std::fill(stripped.text.token_table.data().begin(), stripped.text.token_table.data().end(), 0.0);
  std::fill(stripped.text.mix.w.data().begin(), stripped.text.mix.w.data().end(), 0.0);
  d2s::zero_params(stripped.momentum_params);
  stripped.buffer_v_entries.clear();
  stripped.buffer_s_entries.clear();

  EXPECT_EQ(d2s::infer(stripped, images), baseline);
}

TEST(Infer, DimensionMismatchError) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(12, 20, gen);
  const d2s::Checkpoint ck = d2s::train(tiny_config(gen), data).checkpoint;
  EXPECT_THROW(d2s::infer(ck, {Vector(10, 0.5)}), std::invalid_argument);
}

TEST(Train, DivergenceAbortsWithLastGoodCheckpoint) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(13, 40, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  cfg.lr0 = 1e150;  // blows the parameters up within a couple of steps
  cfg.lr_min = 1e140;
  const std::string dir = temp_dir("d2s_abort_run");
  EXPECT_THROW(d2s::train(cfg, data, dir), d2s::NumericalError);
  EXPECT_TRUE(std::filesystem::exists(dir + "/checkpoint_last_good.json"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/log.csv"));
  std::filesystem::remove_all(dir);
}

TEST(Train, RunDirectoryArtifacts) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(14, 40, gen);
  const d2s::TrainConfig cfg = tiny_config(gen);
  const std::string dir = temp_dir("d2s_run");
  d2s::train(cfg, data, dir);
  for (const char* name :
       {"config.json", "log.csv", "checkpoint.json", "diagnostics.json", "caption_cache.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(dir + "/" + name)) << name;
  }
  // config echo reproduces the run
  std::ifstream in(dir + "/config.json");
  const auto j = nlohmann::json::parse(in);
  const d2s::TrainConfig echoed = d2s::train_config_from_json(j);
  const d2s::Checkpoint again = d2s::train(echoed, data).checkpoint;
  const d2s::Checkpoint original = d2s::load_checkpoint(dir + "/checkpoint.json");
  EXPECT_EQ(again.model, original.model);
  std::filesystem::remove_all(dir);
}

TEST(Train, ConfigValidationErrors) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(15, 10, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  EXPECT_THROW(d2s::train(cfg, {}), d2s::ConfigError);
  cfg.encoder.grid = 32;  // dataset images are 16x16
  EXPECT_THROW(d2s::train(cfg, data), d2s::ConfigError);
  cfg = tiny_config(gen);
  cfg.encoder.vocab = 3;  // captions reference ids beyond this
  EXPECT_THROW(d2s::train(cfg, data), d2s::ConfigError);
}

TEST(Ablate, ReportShape) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset train_data = d2s::generate_dataset(16, 32, gen);
  const d2s::Dataset test_data = d2s::generate_dataset(17, 16, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  cfg.epochs = 1;

  const auto report = d2s::ablate(cfg, train_data, test_data, "ae", {42, 826, 1215});
  EXPECT_EQ(report.rows.size(), 6u);
  ASSERT_EQ(report.cases.size(), 2u);
  EXPECT_EQ(report.cases[0].case_id, 'a');
  EXPECT_EQ(report.cases[1].case_id, 'e');
  for (const auto& c : report.cases) {
    EXPECT_GE(c.stddev.srcc, 0.0);
    EXPECT_LE(std::abs(c.mean.srcc), 1.0);
  }
  const std::string csv = report.runs_csv();
  EXPECT_NE(csv.find("case,seed,srcc"), std::string::npos);

  const auto single = d2s::ablate(cfg, train_data, test_data, "b", {42});
  EXPECT_EQ(single.rows.size(), 1u);
  EXPECT_EQ(single.cases.size(), 1u);
  EXPECT_DOUBLE_EQ(single.cases[0].stddev.srcc, 0.0);
}

TEST(Ablate, UnknownCaseRejected) {
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(18, 16, gen);
  EXPECT_THROW(d2s::ablate(tiny_config(gen), data, data, "z", {42}), d2s::ConfigError);
}

TEST(CompositeLoss, GradientsCoverAllParameters) {
  // spot check that every parameter group receives gradient when all losses
  // are active (pool query included)
  const d2s::GenConfig gen = tiny_gen();
  const d2s::Dataset data = d2s::generate_dataset(19, 8, gen);
  d2s::TrainConfig cfg = tiny_config(gen);
  d2s::Trainer trainer(cfg, data);

  std::vector<d2s::BatchSample> batch;
  for (std::size_t i = 0; i < 4; ++i) {
    batch.push_back({data[i].image, data[i].gt, &trainer.caption_embeddings()[i],
                     d2s::feature_entropy(trainer.caption_embeddings()[i])});
  }
  Vector buf_v(8, 2.0), buf_s(8, 2.1);
  for (std::size_t i = 0; i < 8; ++i) {
    buf_v[i] += 0.01 * static_cast<double>(i);
    buf_s[i] -= 0.02 * static_cast<double>(i);
  }
  const auto result =
      d2s::composite_loss(trainer.make_checkpoint().model, cfg.encoder, cfg.ablation,
                          cfg.alignment, batch, buf_v, buf_s, /*eal_active=*/true);
  EXPECT_GT(d2s::norm(d2s::flatten_params(result.grads)), 0.0);
  EXPECT_GT(d2s::norm(result.grads.vision.pool_query), 0.0);
  EXPECT_GT(d2s::norm(result.grads.connector.w.data()), 0.0);
}

}  // namespace
