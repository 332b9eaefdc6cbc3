// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "lepo/trainer.hpp"

namespace lepo {
namespace {

namespace fs = std::filesystem;

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.model.vocab_size = 32;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.max_seq_len = 32;
  cfg.tasks.mixture = single_task_mixture(TaskKind::add_chain, 2);
  cfg.tasks.train_size = 16;
  cfg.trainer.steps = 10;
  cfg.trainer.group_size = 4;
  cfg.trainer.batch_size = 2;
  cfg.trainer.latent_steps = 2;
  cfg.trainer.learning_rate = 1e-2;
  cfg.trainer.warmstart_steps = 3;
  cfg.trainer.warmstart_batch = 4;
  cfg.validate();
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "lepo_trainer_test";
  fs::create_directories(dir);
  return dir / name;
}

// everything except wall time, which is the only nondeterministic field
json comparable(const MetricsRecord& r) {
  json j = r.to_json();
  j.erase("wall_ms");
  return j;
}

TEST(CosineLr, ClosedFormPoints) {
  const double base = 3e-4;
  // 100 steps at ratio 0.1 → 10 warmup steps, 90 decay steps
  EXPECT_EQ(cosine_lr(0, 100, 0.1, base), 0.0);
  EXPECT_DOUBLE_EQ(cosine_lr(5, 100, 0.1, base), base / 2.0);
  EXPECT_EQ(cosine_lr(10, 100, 0.1, base), base);
  EXPECT_NEAR(cosine_lr(55, 100, 0.1, base), base / 2.0, 1e-18);
  EXPECT_NEAR(cosine_lr(100, 100, 0.1, base), 0.0, 1e-12);
  // default ratio over 200 steps: ceil(6) warmup steps
  EXPECT_EQ(cosine_lr(6, 200, 0.03, base), base);
  EXPECT_LT(cosine_lr(5, 200, 0.03, base), base);
}

TEST(CosineLr, MonotoneAfterWarmupAndRejectsOverrun) {
  double prev = cosine_lr(10, 100, 0.1, 1.0);
  for (std::size_t s = 11; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 0.1, 1.0);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_EQ(cosine_lr(0, 10, 0.0, 1.0), 1.0);
  EXPECT_THROW(cosine_lr(11, 10, 0.1, 1.0), ContractError);
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  ModelConfig mc = tiny_run().model;
  ModelParams p = ModelParams::init(mc, 1);
  const ModelParams before = p.copy(true);
  Tape tape;
  Tensor total = Tensor::scalar(0.0);
  {
    TapeScope scope(tape);
    for (const auto& t : p.tensors()) total = add(total, sum(t));
  }
  tape.backward(total);
  auto state = OptimizerState::for_params(p);
  const AdamHyper h{0.9, 0.99, 1e-8, 0.1};
  const double lr = 0.01;
  adamw_update(p, state, h, lr);
  EXPECT_EQ(state.step, 1U);
  // unit gradients: bias-corrected first step is 1 / (1 + eps)
  const double step = 1.0 / (1.0 + 1e-8);
  const auto after = p.tensors();
  const auto orig = before.tensors();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const double decay = after[i].rank() >= 2 ? 0.1 : 0.0;
    for (std::size_t j = 0; j < after[i].size(); ++j) {
      const double w0 = orig[i].data()[j];
      EXPECT_NEAR(after[i].data()[j], w0 - lr * (step + decay * w0), 1e-15);
    }
  }
}

TEST(Trainer, ZeroLearningRateLeavesParamsBitExact) {
  RunConfig cfg = tiny_run();
  cfg.trainer.learning_rate = 0.0;
  Trainer t(cfg);
  t.prepare();
  const ModelParams start = t.params().copy(false);
  for (int i = 0; i < 3; ++i) {
    const auto rec = t.step();
    EXPECT_EQ(rec.step, static_cast<std::size_t>(i));
    EXPECT_FALSE(rec.aborted);
    EXPECT_TRUE(std::isfinite(rec.loss_total));
  }
  EXPECT_TRUE(t.params().bit_equal(start));
}

TEST(Trainer, AllEqualRewardsWithoutKlLeaveParamsUnchanged) {
  RunConfig cfg = tiny_run();
  cfg.trainer.beta = 0.0;
  cfg.trainer.warmstart_steps = 0;
  Trainer t(cfg);
  t.prepare();
  const ModelParams start = t.params().copy(false);
  // the untrained tiny model answers every query wrongly at this seed
  const auto rec = t.step();
  ASSERT_EQ(rec.reward_mean, 0.0);
  EXPECT_EQ(rec.grad_norm, 0.0);
  EXPECT_TRUE(t.params().bit_equal(start));
  EXPECT_EQ(t.optimizer().step, 0U);
}

TEST(Trainer, ReferenceIsPostWarmStartSnapshot) {
  Trainer t(tiny_run());
  t.prepare();
  EXPECT_TRUE(t.reference().bit_equal(t.params()));
  t.step();
  t.step();
  EXPECT_FALSE(t.reference().bit_equal(t.params()));
}

TEST(Trainer, MetricsStreamsAreDeterministic) {
  Trainer a(tiny_run()), b(tiny_run());
  for (int i = 0; i < 4; ++i) EXPECT_EQ(comparable(a.step()), comparable(b.step()));
  EXPECT_TRUE(a.params().bit_equal(b.params()));
}

TEST(Trainer, ParallelRolloutsMatchSerial) {
  RunConfig par = tiny_run();
  par.trainer.workers = 3;
  Trainer a(tiny_run()), b(par);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(comparable(a.step()), comparable(b.step()));
  EXPECT_TRUE(a.params().bit_equal(b.params()));
}

TEST(Trainer, ResumeFromCheckpointIsBitIdentical) {
  Trainer full(tiny_run());
  std::vector<json> full_records;
  while (!full.finished()) full_records.push_back(comparable(full.step()));

  Trainer first(tiny_run());
  for (int i = 0; i < 5; ++i) first.step();
  const auto path = scratch("resume.ckpt");
  first.save(path);
  Trainer resumed = Trainer::load(path);
  EXPECT_EQ(resumed.steps_done(), 5U);
  EXPECT_TRUE(resumed.params().bit_equal(first.params()));
  std::vector<json> tail;
  while (!resumed.finished()) tail.push_back(comparable(resumed.step()));

  ASSERT_EQ(tail.size(), 5U);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(tail[i], full_records[5 + i]);
  EXPECT_TRUE(resumed.params().bit_equal(full.params()));
  EXPECT_TRUE(resumed.reference().bit_equal(full.reference()));
  EXPECT_EQ(resumed.optimizer().m, full.optimizer().m);
  EXPECT_EQ(resumed.optimizer().v, full.optimizer().v);
}

TEST(Trainer, CheckpointLoadsAsModel) {
  Trainer t(tiny_run());
  t.step();
  const auto path = scratch("as_model.ckpt");
  t.save(path);
  const auto params = load_model(path);
  EXPECT_EQ(params.config, t.config().model);
  EXPECT_TRUE(params.bit_equal(t.params()));
}

TEST(Trainer, CorruptCheckpointIsRejected) {
  Trainer t(tiny_run());
  const auto path = scratch("corrupt.ckpt");
  t.save(path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  std::string bad = bytes;
  bad[0] ^= 0x20;
  write(bad);
  EXPECT_THROW(Trainer::load(path), FormatError);

  bad = bytes;
  bad[8] = 9;  // version field
  write(bad);
  try {
    Trainer::load(path);
    FAIL() << "version mismatch accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  write(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(Trainer::load(path), FormatError);
}

TEST(Trainer, NonTrainerArchiveIsRejected) {
  const auto path = scratch("model_only.ckpt");
  const ModelConfig mc = tiny_run().model;
  save_model(ModelParams::init(mc, 0), path);
  EXPECT_THROW(Trainer::load(path), FormatError);
}

TEST(Trainer, KlPenaltyAnchorsPolicy) {
  RunConfig loose = tiny_run();
  loose.trainer.beta = 0.0;
  loose.trainer.learning_rate = 3e-2;
  loose.trainer.warmstart_steps = 40;
  loose.trainer.warmstart_lr = 1e-2;
  RunConfig tight = loose;
  tight.trainer.beta = 10.0;
  Trainer a(loose), b(tight);
  MetricsRecord ra, rb;
  while (!a.finished()) ra = a.step();
  double reward = 0.0;
  while (!b.finished()) reward += (rb = b.step()).reward_mean;
  ASSERT_GT(reward, 0.0);
  EXPECT_LT(rb.kl, ra.kl);
}

TEST(Trainer, NearUniformPolicyEntropyIsLogVocab) {
  RunConfig cfg = tiny_run();
  cfg.model.init_std = 1e-4;
  cfg.trainer.warmstart_steps = 0;
  Trainer t(cfg);
  const auto rec = t.step();
  EXPECT_NEAR(rec.entropy_mean, std::log(32.0), 1e-3);
}

TEST(MetricsWriter, ConfigFirstThenOneRecordPerStep) {
  const auto dir = scratch("metrics_run");
  fs::remove_all(dir);
  RunConfig cfg = tiny_run();
  cfg.trainer.mode = ObjectiveMode::grpo_discrete;
  {
    MetricsWriter w(dir, cfg);
    Trainer t(cfg);
    for (int i = 0; i < 2; ++i) w.write(t.step());
  }
  std::ifstream in(dir / "metrics.jsonl");
  std::vector<json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(json::parse(line));
  ASSERT_EQ(lines.size(), 3U);
  EXPECT_EQ(lines[0]["type"], "config");
  EXPECT_EQ(lines[0]["config"]["trainer"]["mode"], "grpo_discrete");
  for (const char* key : {"step", "lr", "reward_mean", "loss_total", "j_latent", "j_discrete", "kl", "entropy_mean",
                          "tokens_mean", "grad_norm", "wall_ms"}) {
    EXPECT_TRUE(lines[1].contains(key)) << key;
  }
  EXPECT_EQ(lines[2]["step"], 1);

  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, MetricsRecord::csv_header());
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 2U);
}

TEST(Trainer, EpochsOverrideStepCount) {
  RunConfig cfg = tiny_run();
  cfg.trainer.epochs = 2;
  // 16 instances, 2 per step
  EXPECT_EQ(cfg.total_steps(), 16U);
  Trainer t(cfg);
  std::multiset<std::string> epoch0;
  for (std::size_t s = 0; s < 8; ++s)
    for (const auto& inst : t.batch_for_step(s)) epoch0.insert(inst.query);
  std::multiset<std::string> all;
  for (const auto& inst : t.train_set()) all.insert(inst.query);
  EXPECT_EQ(epoch0, all);
}

}  // namespace
}  // namespace lepo
