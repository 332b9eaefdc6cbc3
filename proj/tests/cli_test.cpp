// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lepo/cli.hpp"

namespace lepo {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lepo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("lepo_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    setenv(cli::kOutputRootEnv, (root_ / "runs").c_str(), 1);
    RunConfig cfg;
    cfg.model.vocab_size = 32;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 32;
    cfg.model.max_seq_len = 32;
    cfg.tasks.mixture = single_task_mixture(TaskKind::add_chain, 2);
    cfg.tasks.train_size = 16;
    cfg.tasks.eval_size = 4;
    cfg.eval.k = 4;
    cfg.trainer.steps = 10;
    cfg.trainer.group_size = 4;
    cfg.trainer.batch_size = 2;
    cfg.trainer.latent_steps = 2;
    cfg.trainer.warmstart_steps = 2;
    cfg.trainer.checkpoint_every = 5;
    config_ = (root_ / "tiny.json").string();
    std::ofstream(config_) << to_json(cfg).dump(2);
  }

  void TearDown() override { fs::remove_all(root_); }

  fs::path output(const std::string& name) const { return root_ / name; }

  static std::vector<json> step_records(const fs::path& run) {
    std::ifstream in(run / "metrics.jsonl");
    std::vector<json> out;
    for (std::string line; std::getline(in, line);) {
      json j = json::parse(line);
      if (j["type"] == "step") {
        j.erase("wall_ms");
        out.push_back(j);
      }
    }
    return out;
  }

  fs::path root_;
  std::string config_;
};

TEST_F(CliTest, MissingConfigFileExitsTwoNamingPath) {
  const auto r = run_cli({"train", "-c", "/no/such/config.json"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("/no/such/config.json"), std::string::npos);
}

TEST_F(CliTest, InvalidFieldExitsTwoNamingField) {
  auto r = run_cli({"train", "-c", config_, "-o", "trainer.bogus=1"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("trainer.bogus"), std::string::npos);
  r = run_cli({"train", "-c", config_, "-o", "trainer.group_size=1"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("trainer.group_size"), std::string::npos);
  r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, cli::kExitConfig);
}

TEST_F(CliTest, SmokeTrainWritesArtifacts) {
  const auto run = output("smoke");
  const auto r = run_cli({"train", "-c", config_, "-o", "output_dir=\"" + run.string() + "\"", "-o",
                          "trainer.mode=grpo_discrete"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(step_records(run).size(), 10U);
  std::ifstream in(run / "metrics.jsonl");
  std::string first;
  std::getline(in, first);
  const json head = json::parse(first);
  EXPECT_EQ(head["type"], "config");
  EXPECT_EQ(head["config"]["trainer"]["mode"], "grpo_discrete");
  EXPECT_TRUE(fs::exists(run / "config.json"));
  EXPECT_TRUE(fs::exists(run / "final.ckpt"));
  EXPECT_TRUE(fs::exists(run / "checkpoints" / "step_000005.ckpt"));
  EXPECT_TRUE(fs::exists(run / "eval.json"));
  EXPECT_TRUE(fs::exists(run / "eval.csv"));
  EXPECT_NE(r.out.find("pass@4"), std::string::npos);
}

TEST_F(CliTest, DefaultRunDirectoryIsTimestampedUnderOutputRoot) {
  const auto r = run_cli({"train", "-c", config_, "--no-eval", "-o", "trainer.steps=1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(root_ / "runs")) runs.push_back(e.path());
  ASSERT_EQ(runs.size(), 1U);
  EXPECT_NE(runs[0].filename().string().find("lepo-s0"), std::string::npos);
  EXPECT_TRUE(fs::exists(runs[0] / "config.json"));
}

TEST_F(CliTest, ResolvedConfigReproducesMetrics) {
  const auto a = output("a"), b = output("b");
  ASSERT_EQ(run_cli({"train", "-c", config_, "--no-eval", "-o", "output_dir=\"" + a.string() + "\"", "-o",
                     "seed=11"}).code,
            0);
  ASSERT_EQ(run_cli({"train", "-c", (a / "config.json").string(), "--no-eval", "-o",
                     "output_dir=\"" + b.string() + "\""}).code,
            0);
  EXPECT_EQ(step_records(a), step_records(b));
}

TEST_F(CliTest, ResumeMatchesUninterruptedRun) {
  const auto run = output("resume");
  ASSERT_EQ(run_cli({"train", "-c", config_, "--no-eval", "-o", "output_dir=\"" + run.string() + "\""}).code, 0);
  const auto full = step_records(run);
  const auto final_params = load_model(run / "final.ckpt");
  const auto r = run_cli({"train", "--resume", (run / "checkpoints" / "step_000005.ckpt").string(), "--no-eval"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(step_records(run), full);
  EXPECT_TRUE(load_model(run / "final.ckpt").bit_equal(final_params));
  EXPECT_EQ(run_cli({"train", "--resume", (run / "final.ckpt").string(), "-c", config_}).code, cli::kExitConfig);
}

TEST_F(CliTest, EvalWithBaselineWritesShift) {
  const auto run = output("for_eval");
  ASSERT_EQ(run_cli({"train", "-c", config_, "--no-eval", "-o", "output_dir=\"" + run.string() + "\""}).code, 0);
  const auto dest = output("eval_out");
  const auto r = run_cli({"eval", "--checkpoint", (run / "final.ckpt").string(), "--baseline",
                          (run / "checkpoints" / "step_000005.ckpt").string(), "-k", "3", "--output", dest.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dest / "eval.json");
  const json report = json::parse(in);
  EXPECT_EQ(report["k"], 3);
  EXPECT_EQ(report["problems"].size(), 4U);
  EXPECT_TRUE(fs::exists(dest / "difficulty_shift.json"));
  EXPECT_EQ(run_cli({"eval", "--checkpoint", (root_ / "missing.ckpt").string()}).code, cli::kExitConfig);
}

TEST_F(CliTest, SweepGridRowsSortedAndFailuresRecorded) {
  const std::string base = "output_dir=\"" + output("sweep").string() + "\"";
  auto r = run_cli({"sweep", "-c", config_, "-o", base, "-o", "trainer.steps=2", "--latent-steps", "3,1", "--tau",
                    "0.7,0.3", "-j", "2"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::ifstream in(output("sweep") / "summary.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5U);
  EXPECT_EQ(lines[0], "latent_steps,tau_g,seed,status,final_pass_at_1,final_reward,run_dir");
  EXPECT_EQ(lines[1].substr(0, 6), "1,0.3,");
  EXPECT_EQ(lines[2].substr(0, 6), "1,0.7,");
  EXPECT_EQ(lines[3].substr(0, 6), "3,0.3,");
  EXPECT_EQ(lines[4].substr(0, 6), "3,0.7,");

  const std::string single = "output_dir=\"" + output("single").string() + "\"";
  r = run_cli({"sweep", "-c", config_, "-o", single, "-o", "trainer.steps=1", "--latent-steps", "2", "--tau", "0.5"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;

  // 40 latent steps overflow the 32-token context: recorded, sweep continues
  const std::string bad = "output_dir=\"" + output("bad").string() + "\"";
  r = run_cli({"sweep", "-c", config_, "-o", bad, "-o", "trainer.steps=1", "--latent-steps", "1,40", "--tau", "0.5"});
  EXPECT_EQ(r.code, cli::kExitPartial);
  std::ifstream bad_in(output("bad") / "summary.csv");
  std::string header, ok_row, failed_row;
  std::getline(bad_in, header);
  std::getline(bad_in, ok_row);
  std::getline(bad_in, failed_row);
  EXPECT_NE(ok_row.find(",ok,"), std::string::npos);
  EXPECT_NE(failed_row.find("failed"), std::string::npos);
}

TEST_F(CliTest, InspectPrintsOneTracePerRollout) {
  const auto ckpt = output("model.ckpt");
  RunConfig cfg = load_run_config(config_);
  save_model(ModelParams::init(cfg.model, 0), ckpt);
  auto r = run_cli({"inspect", "--checkpoint", ckpt.string(), "--query", "3+4", "-n", "1", "--noise", "none",
                    "--latent-steps", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto count = [](const std::string& s, const std::string& what) {
    std::size_t n = 0;
    for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count(r.out, "rollout "), 1U);
  EXPECT_EQ(count(r.out, "latent "), 3U);
  const auto again = run_cli({"inspect", "--checkpoint", ckpt.string(), "--query", "3+4", "-n", "1", "--noise", "none",
                              "--latent-steps", "3", "--seed", "9"});
  // without noise the latent steps do not depend on the seed; answers are still sampled
  EXPECT_EQ(again.out.substr(0, again.out.find("  output:")), r.out.substr(0, r.out.find("  output:")));
  EXPECT_EQ(run_cli({"inspect", "--checkpoint", ckpt.string(), "--query", "3+4", "--noise", "none", "--latent-steps",
                     "3", "--seed", "9"})
                .out,
            again.out);

  r = run_cli({"inspect", "--checkpoint", ckpt.string(), "--query", "3+4", "-n", "3", "--noise", "gumbel"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(count(r.out, "rollout "), 3U);
  EXPECT_EQ(count(r.out, "answer:"), 3U);

  r = run_cli({"inspect", "--checkpoint", ckpt.string(), "--query", "3+?"});
  EXPECT_EQ(r.code, cli::kExitConfig);
}

TEST(InspectTrace, PeakedAndUncertainStepsRender) {
  const Vocabulary vocab(32);
  Trajectory traj;
  std::vector<double> peaked(32, 0.05 / 31.0), split(32, 0.0);
  peaked[vocab.digit(7)] = 0.95;
  split[vocab.digit(3)] = 0.45;
  split[vocab.digit(4)] = 0.35;
  for (std::size_t i = 0; i < 32; ++i)
    if (i != vocab.digit(3) && i != vocab.digit(4)) split[i] = 0.2 / 30.0;
  traj.step_distributions = {peaked, split};
  traj.latent_tokens = {LatentToken{peaked}, LatentToken{split}};
  traj.answer_ids = vocab.tokenize("<ANS>7<EOS>");
  std::ostringstream os;
  cli::print_trace(os, traj, vocab);
  const std::string text = os.str();
  EXPECT_NE(text.find("latent 1:  7 0.950  "), std::string::npos) << text;
  EXPECT_NE(text.find("latent 2:  3 0.450  4 0.350  "), std::string::npos) << text;
  EXPECT_NE(text.find("answer: 7\n"), std::string::npos) << text;
}

TEST_F(CliTest, ExportPlotsWritesCurves) {
  const auto run = output("plots_run");
  ASSERT_EQ(run_cli({"train", "-c", config_, "-o", "output_dir=\"" + run.string() + "\""}).code, 0);
  const auto r = run_cli({"export-plots", "--run", run.string(), "--window", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(run / "plots" / "training_curves.csv");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 11U);
  EXPECT_TRUE(fs::exists(run / "plots" / "difficulty_bins.csv"));
  EXPECT_TRUE(fs::exists(run / "plots" / "pass_at_k.csv"));
  EXPECT_EQ(run_cli({"export-plots", "--run", output("nothing").string()}).code, cli::kExitConfig);
}

TEST(ShippedConfigs, ParseAndMatchDefaults) {
  const fs::path dir = fs::path(LEPO_SOURCE_DIR) / "configs";
  EXPECT_EQ(to_json(load_run_config(dir / "default.json")), to_json(RunConfig{}));
  RunConfig add = RunConfig{};
  add.tasks.mixture = single_task_mixture(TaskKind::add_chain, 2);
  EXPECT_EQ(to_json(load_run_config(dir / "add_chain_d2.json")), to_json(add));
}

}  // namespace
}  // namespace lepo
