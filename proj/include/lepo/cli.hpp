// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `lepo` command line: train, eval, sweep, inspect and export-plots.
// Everything lives here so tests can drive the commands in-process; the
// executable in tools/ only forwards argv.

#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lepo/config.hpp"
#include "lepo/eval.hpp"
#include "lepo/parallel.hpp"
#include "lepo/trainer.hpp"

namespace lepo::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

/// Consecutive aborted steps after which a run gives up.
inline constexpr std::size_t kAbortCascade = 5;
/// Trailing window for the reported final reward.
inline constexpr std::size_t kRewardWindow = 20;

inline constexpr const char* kOutputRootEnv = "LEPO_OUTPUT_ROOT";

inline fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream os;
  os << std::put_time(&utc, "%Y%m%d-%H%M%S");
  return os.str();
}

/// A fresh directory `<root>/<timestamp>-<label>`, suffixed if taken.
inline fs::path fresh_run_dir(const fs::path& root, const std::string& label) {
  const std::string base = timestamp() + "-" + label;
  fs::path dir = root / base;
  for (int i = 2; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

inline fs::path run_dir_for(const RunConfig& cfg, const std::string& label) {
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    return cfg.output_dir;
  }
  return fresh_run_dir(output_root(), label);
}

/// Defaults, then the file (if any), then the overrides.
inline RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  json tree = path.empty() ? to_json(RunConfig{}) : load_config_tree(path);
  for (const auto& o : overrides) apply_override(tree, o);
  return parse_run_config(tree);
}

inline void write_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  std::ofstream os(dir / "config.json");
  if (!os) throw FormatError("cannot write '" + (dir / "config.json").string() + "'");
  os << to_json(cfg).dump(2) << '\n';
}

/// Held-out problems: same mixture as training under a different seed.
inline std::vector<TaskInstance> eval_set(const RunConfig& cfg) {
  const Vocabulary vocab(cfg.model.vocab_size);
  const std::uint64_t seed = Rng::stream({cfg.seed, 0xE7A1}).next_u64();
  return make_dataset(vocab, cfg.tasks.mixture, cfg.tasks.eval_size, seed);
}

inline EvalReport evaluate_config(const ModelParams& params, const RunConfig& cfg) {
  return evaluate(params, eval_set(cfg), cfg.eval.k, cfg.eval_rollout(), cfg.seed, cfg.trainer.workers);
}

inline void print_summary(std::ostream& out, const EvalReport& r) {
  out << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, const Summary& s) {
    out << std::left << std::setw(12) << name << std::right << std::setw(6) << s.problems << std::setw(10)
        << s.pass_at_1 << std::setw(10) << s.pass_at_k << std::setw(10) << s.entropy_mean << std::setw(10)
        << s.tokens_mean << '\n';
  };
  out << std::left << std::setw(12) << "kind" << std::right << std::setw(6) << "n" << std::setw(10) << "pass@1"
      << std::setw(10) << ("pass@" + std::to_string(r.k)) << std::setw(10) << "entropy" << std::setw(10) << "tokens"
      << '\n';
  for (const auto& [kind, s] : r.per_kind) row(kind, s);
  row("all", r.aggregate);
  out.unsetf(std::ios::floatfield);
  out << std::setprecision(6);
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  int exit_code = kExitOk;
  fs::path run_dir;
  std::size_t steps = 0;
  double final_reward = 0.0;  // mean over the last kRewardWindow steps
  std::optional<EvalReport> eval;
};

inline std::string checkpoint_name(std::size_t step) {
  std::ostringstream os;
  os << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

/// Drops metrics records at or after `step` so a resumed run does not
/// duplicate the steps it replays.
inline void truncate_metrics(const fs::path& dir, std::size_t step) {
  auto filter = [&](const fs::path& path, auto keep) {
    std::ifstream in(path);
    if (!in) return;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
      if (keep(line, lines.size())) lines.push_back(line);
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
  };
  filter(dir / "metrics.jsonl", [&](const std::string& line, std::size_t) {
    const json j = json::parse(line, nullptr, false);
    return j.is_discarded() || j.value("type", "") != "step" || j["step"].get<std::size_t>() < step;
  });
  filter(dir / "metrics.csv", [&](const std::string& line, std::size_t index) {
    return index == 0 || std::stoull(line.substr(0, line.find(','))) < step;
  });
}

/// Runs (or continues) `trainer` to completion inside `dir`.
inline TrainOutcome run_training(Trainer& trainer, const fs::path& dir, bool resumed, bool with_eval,
                                 std::ostream& log) {
  TrainOutcome outcome;
  outcome.run_dir = dir;
  const RunConfig& cfg = trainer.config();
  if (resumed) {
    truncate_metrics(dir, trainer.steps_done());
  } else {
    write_resolved_config(dir, cfg);
  }
  MetricsWriter metrics(dir, cfg, resumed);
  if (!trainer.prepared()) {
    const double warm = trainer.prepare();
    log << "warm start: " << cfg.trainer.warmstart_steps << " steps, final loss " << warm << '\n';
  }
  std::vector<double> rewards;
  std::size_t aborted_in_row = 0;
  while (!trainer.finished()) {
    const MetricsRecord rec = trainer.step();
    metrics.write(rec);
    rewards.push_back(rec.reward_mean);
    aborted_in_row = rec.aborted ? aborted_in_row + 1 : 0;
    if (rec.aborted) log << "step " << rec.step << " aborted: " << rec.diagnostic << '\n';
    if (rec.step % 10 == 0 || trainer.finished()) {
      log << "step " << rec.step << " reward " << rec.reward_mean << " kl " << rec.kl << " entropy "
          << rec.entropy_mean << '\n';
    }
    if (aborted_in_row >= kAbortCascade) {
      trainer.save(dir / "aborted.ckpt");
      log << "giving up after " << kAbortCascade << " consecutive non-finite steps\n";
      outcome.exit_code = kExitNumeric;
      outcome.steps = trainer.steps_done();
      return outcome;
    }
    const std::size_t done = trainer.steps_done();
    if (cfg.trainer.checkpoint_every > 0 && done % cfg.trainer.checkpoint_every == 0 && !trainer.finished()) {
      fs::create_directories(dir / "checkpoints");
      trainer.save(dir / "checkpoints" / checkpoint_name(done));
    }
  }
  trainer.save(dir / "final.ckpt");
  outcome.steps = trainer.steps_done();
  if (!rewards.empty()) {
    const std::size_t w = std::min(kRewardWindow, rewards.size());
    outcome.final_reward = std::accumulate(rewards.end() - static_cast<std::ptrdiff_t>(w), rewards.end(), 0.0) /
                           static_cast<double>(w);
  }
  if (with_eval) {
    outcome.eval = evaluate_config(trainer.params(), cfg);
    write_report(*outcome.eval, dir / "eval.json", dir / "eval.csv");
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  std::size_t latent_steps = 0;
  double tau_g = 0.0;
  std::uint64_t seed = 0;
  std::string status;
  double pass_at_1 = 0.0;
  double final_reward = 0.0;
  std::string run_dir;
};

inline std::uint64_t sweep_seed(std::uint64_t base, std::size_t latent_steps, double tau_g) {
  return Rng::stream({base, 0x5EE9, latent_steps, std::bit_cast<std::uint64_t>(tau_g)}).next_u64() % 1000000007ULL;
}

inline std::string tau_label(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

/// One child run per (L_g, τ_g) pair; failures are recorded, not fatal.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, std::vector<std::size_t> latent_grid,
                                       std::vector<double> tau_grid, const fs::path& dir, std::size_t jobs) {
  std::sort(latent_grid.begin(), latent_grid.end());
  latent_grid.erase(std::unique(latent_grid.begin(), latent_grid.end()), latent_grid.end());
  std::sort(tau_grid.begin(), tau_grid.end());
  tau_grid.erase(std::unique(tau_grid.begin(), tau_grid.end()), tau_grid.end());
  std::vector<SweepRow> rows;
  for (auto l : latent_grid)
    for (auto t : tau_grid) rows.push_back({l, t, sweep_seed(base.seed, l, t), "", 0.0, 0.0, ""});

  parallel_for(rows.size(), std::max<std::size_t>(jobs, 1), [&](std::size_t i) {
    SweepRow& row = rows[i];
    const fs::path child = dir / ("lg" + std::to_string(row.latent_steps) + "_tau" + tau_label(row.tau_g));
    row.run_dir = child.string();
    try {
      RunConfig cfg = base;
      cfg.seed = row.seed;
      cfg.trainer.latent_steps = row.latent_steps;
      cfg.trainer.tau_g = row.tau_g;
      cfg.trainer.workers = 1;
      cfg.output_dir = child.string();
      cfg.validate();
      fs::create_directories(child);
      std::ofstream log(child / "train.log");
      Trainer trainer(cfg);
      const auto outcome = run_training(trainer, child, false, true, log);
      row.final_reward = outcome.final_reward;
      if (outcome.eval) row.pass_at_1 = outcome.eval->aggregate.pass_at_1;
      row.status = outcome.exit_code == kExitOk ? "ok" : "numeric_abort";
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
  });
  return rows;
}

inline void write_sweep_summary(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write '" + path.string() + "'");
  os << "latent_steps,tau_g,seed,status,final_pass_at_1,final_reward,run_dir\n";
  os.precision(17);
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << r.latent_steps << ',' << tau_label(r.tau_g) << ',' << r.seed << ',' << status << ',' << r.pass_at_1 << ','
       << r.final_reward << ',' << r.run_dir << '\n';
  }
}

// ---------------------------------------------------------------------------
// inspect

/// The `top` most likely tokens, probability first, ties by id.
inline std::vector<std::pair<std::size_t, double>> top_tokens(std::span<const double> pi, std::size_t top) {
  std::vector<std::size_t> order(pi.size());
  std::iota(order.begin(), order.end(), 0);
  const auto keep = std::min(top, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) { return pi[a] > pi[b] || (pi[a] == pi[b] && a < b); });
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < keep; ++i) out.emplace_back(order[i], pi[order[i]]);
  return out;
}

/// One rollout rendered as text: per latent step the policy's top-5 tokens
/// and the argmax of the sampled latent, then the decoded answer.
inline void print_trace(std::ostream& out, const Trajectory& traj, const Vocabulary& vocab) {
  out << std::fixed << std::setprecision(3);
  for (std::size_t t = 0; t < traj.latent_length(); ++t) {
    out << "  latent " << t + 1 << ":";
    for (const auto& [id, p] : top_tokens(traj.step_distributions[t], 5)) out << "  " << vocab.symbol(id) << ' ' << p;
    out << "   | z argmax " << vocab.symbol(argmax(traj.latent_tokens[t].z)) << '\n';
  }
  std::vector<std::size_t> answer;
  extract_answer(traj.answer_ids, answer);
  out << "  output: " << vocab.detokenize(traj.answer_ids) << "\n  answer: " << vocab.detokenize(answer) << '\n';
  out.unsetf(std::ios::floatfield);
  out << std::setprecision(6);
}

// ---------------------------------------------------------------------------
// export-plots

inline std::vector<json> read_metrics(const fs::path& run) {
  std::ifstream in(run / "metrics.jsonl");
  if (!in) throw FormatError("no metrics.jsonl in '" + run.string() + "'");
  std::vector<json> steps;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError("metrics.jsonl line " + std::to_string(line_no) + " is not valid JSON");
    if (j.value("type", "") == "step") steps.push_back(std::move(j));
  }
  std::stable_sort(steps.begin(), steps.end(),
                   [](const json& a, const json& b) { return a["step"].get<std::size_t>() < b["step"].get<std::size_t>(); });
  return steps;
}

inline void export_plots(const fs::path& run, const fs::path& out_dir, std::size_t window) {
  const auto steps = read_metrics(run);
  fs::create_directories(out_dir);
  std::ofstream curves(out_dir / "training_curves.csv");
  curves.precision(17);
  curves << "step,lr,reward_mean,reward_moving_avg,loss_total,j_latent,j_discrete,kl,entropy_mean,tokens_mean,grad_norm\n";
  std::vector<double> rewards;
  for (const auto& s : steps) {
    rewards.push_back(s["reward_mean"].get<double>());
    const std::size_t w = std::min(window, rewards.size());
    const double ma = std::accumulate(rewards.end() - static_cast<std::ptrdiff_t>(w), rewards.end(), 0.0) /
                      static_cast<double>(w);
    curves << s["step"].get<std::size_t>() << ',' << s["lr"].get<double>() << ',' << rewards.back() << ',' << ma << ','
           << s["loss_total"].get<double>() << ',' << s["j_latent"].get<double>() << ','
           << s["j_discrete"].get<double>() << ',' << s["kl"].get<double>() << ',' << s["entropy_mean"].get<double>()
           << ',' << s["tokens_mean"].get<double>() << ',' << s["grad_norm"].get<double>() << '\n';
  }
  if (fs::exists(run / "eval.json")) {
    std::ifstream in(run / "eval.json");
    const json report = json::parse(in, nullptr, false);
    if (report.is_discarded()) throw FormatError("eval.json in '" + run.string() + "' is not valid JSON");
    std::ofstream bins(out_dir / "difficulty_bins.csv");
    bins << "bin,count\n";
    for (const auto& b : report["histogram"]) bins << b["bin"].get<std::string>() << ',' << b["count"].get<std::size_t>() << '\n';
    std::ofstream curve(out_dir / "pass_at_k.csv");
    curve.precision(17);
    curve << "k,pass\n";
    const auto& pc = report["pass_curve"];
    for (std::size_t j = 0; j < pc.size(); ++j) curve << j + 1 << ',' << pc[j].get<double>() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Entry point

/// Maps the library's exception types onto exit codes.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapacityError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitPartial;
  }
}

/// Settings stored in a trainer checkpoint, or the defaults for bare models.
inline RunConfig config_from_checkpoint(const fs::path& path) {
  const Archive a = load_archive(path);
  if (a.has("kind") && a.get("kind") == "trainer") {
    const json tree = json::parse(a.get("config"), nullptr, false);
    if (tree.is_discarded()) throw FormatError("checkpoint field 'config' is not valid JSON");
    return parse_run_config(tree);
  }
  RunConfig cfg;
  cfg.model = read_model_config(a);
  return cfg;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent exploration policy optimization at desk scale"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, baseline, query, noise, output, resume, run_path;
  std::vector<std::string> overrides;
  std::vector<std::size_t> latent_grid;
  std::vector<double> tau_grid;
  std::size_t k = 0, n_rollouts = 1, jobs = 1, window = kRewardWindow;
  std::optional<std::size_t> latent_steps;
  std::optional<double> tau;
  std::uint64_t seed = 0;
  bool no_eval = false;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON config file (defaults when omitted)");
    cmd->add_option("-o,--override", overrides, "dotted.path=value, applied after the file")->take_all();
  };

  auto* train = app.add_subcommand("train", "train a policy");
  add_config(train);
  train->add_option("--resume", resume, "continue from a trainer checkpoint");
  train->add_flag("--no-eval", no_eval, "skip the final evaluation");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out set");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint, "model or trainer checkpoint")->required();
  eval->add_option("--baseline", baseline, "second checkpoint for a difficulty-bin comparison");
  eval->add_option("-k", k, "samples per problem (default eval.k)");
  eval->add_option("--noise", noise, "latent noise override: gumbel, gaussian, dirichlet or none");
  eval->add_option("--output", output, "directory for eval.json / eval.csv");

  auto* sweep = app.add_subcommand("sweep", "grid over latent steps and Gumbel temperature");
  add_config(sweep);
  sweep->add_option("--latent-steps", latent_grid, "comma-separated L_g values")->delimiter(',')->required();
  sweep->add_option("--tau", tau_grid, "comma-separated tau_g values")->delimiter(',')->required();
  sweep->add_option("-j,--jobs", jobs, "child runs in parallel")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect", "print latent top-5 tokens and answers for a query");
  inspect->add_option("--checkpoint", checkpoint, "model or trainer checkpoint")->required();
  inspect->add_option("--query", query, "query text, e.g. 3+4")->required();
  inspect->add_option("-n,--rollouts", n_rollouts, "number of rollouts")->check(CLI::PositiveNumber);
  inspect->add_option("--noise", noise, "gumbel, gaussian, dirichlet or none");
  inspect->add_option("--latent-steps", latent_steps, "latent steps (default from the checkpoint)");
  inspect->add_option("--tau", tau, "Gumbel temperature (default from the checkpoint)");
  inspect->add_option("--seed", seed, "base seed for the rollouts");

  auto* plots = app.add_subcommand("export-plots", "write plot-ready CSVs for a run directory");
  plots->add_option("--run", run_path, "run directory")->required();
  plots->add_option("--output", output, "destination (default <run>/plots)");
  plots->add_option("--window", window, "moving-average window")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (train->parsed()) {
    return guarded(err, [&] {
      if (!resume.empty()) {
        if (!config_path.empty() || !overrides.empty()) {
          throw ConfigError("--resume takes its settings from the checkpoint; drop --config/--override");
        }
        Trainer trainer = Trainer::load(resume);
        fs::path dir = fs::path(resume).parent_path();
        if (dir.filename() == "checkpoints") dir = dir.parent_path();
        if (dir.empty()) dir = ".";
        out << "resuming " << resume << " at step " << trainer.steps_done() << " in " << dir.string() << '\n';
        const auto outcome = run_training(trainer, dir, true, !no_eval, out);
        if (outcome.eval) print_summary(out, *outcome.eval);
        return outcome.exit_code;
      }
      const RunConfig cfg = resolve_config(config_path, overrides);
      const fs::path dir = run_dir_for(cfg, to_string(cfg.trainer.mode) + "-s" + std::to_string(cfg.seed));
      out << "run directory " << dir.string() << '\n';
      Trainer trainer(cfg);
      const auto outcome = run_training(trainer, dir, false, !no_eval, out);
      if (outcome.eval) print_summary(out, *outcome.eval);
      return outcome.exit_code;
    });
  }

  if (eval->parsed()) {
    return guarded(err, [&] {
      RunConfig cfg = config_path.empty() && overrides.empty() ? config_from_checkpoint(checkpoint)
                                                                : resolve_config(config_path, overrides);
      if (k > 0) cfg.eval.k = k;
      if (!noise.empty()) cfg.sampler.noise_kind = parse_noise_kind(noise);
      cfg.validate();
      const ModelParams params = load_model(checkpoint);
      if (params.config != cfg.model) throw ConfigError("checkpoint model shape does not match the config");
      const fs::path dir = output.empty() ? fresh_run_dir(output_root(), "eval") : fs::path(output);
      fs::create_directories(dir);
      write_resolved_config(dir, cfg);
      const EvalReport report = evaluate_config(params, cfg);
      write_report(report, dir / "eval.json", dir / "eval.csv");
      print_summary(out, report);
      if (!baseline.empty()) {
        const ModelParams base = load_model(baseline);
        if (base.config != cfg.model) throw ConfigError("baseline model shape does not match the config");
        const EvalReport before = evaluate_config(base, cfg);
        write_report(before, dir / "baseline_eval.json", dir / "baseline_eval.csv");
        std::ofstream(dir / "difficulty_shift.json") << shift_json(difficulty_shift(before, report)).dump(2) << '\n';
      }
      out << "wrote " << (dir / "eval.json").string() << '\n';
      return kExitOk;
    });
  }

  if (sweep->parsed()) {
    return guarded(err, [&] {
      const RunConfig base = resolve_config(config_path, overrides);
      if (latent_grid.empty() || tau_grid.empty()) throw ConfigError("sweep grid is empty");
      const fs::path dir = run_dir_for(base, "sweep");
      write_resolved_config(dir, base);
      const auto rows = run_sweep(base, latent_grid, tau_grid, dir, jobs);
      write_sweep_summary(rows, dir / "summary.csv");
      std::size_t failed = 0;
      for (const auto& r : rows) {
        out << "L_g=" << r.latent_steps << " tau_g=" << r.tau_g << " " << r.status << " pass@1=" << r.pass_at_1
            << " reward=" << r.final_reward << '\n';
        if (r.status != "ok") ++failed;
      }
      out << "summary " << (dir / "summary.csv").string() << '\n';
      return failed > 0 ? kExitPartial : kExitOk;
    });
  }

  if (inspect->parsed()) {
    return guarded(err, [&] {
      const RunConfig cfg = config_from_checkpoint(checkpoint);
      const ModelParams params = load_model(checkpoint);
      const Vocabulary vocab(params.config.vocab_size);
      const auto ids = query_ids_for(vocab, query);
      RolloutConfig rc = cfg.train_rollout();
      if (!noise.empty()) rc.sampler.noise_kind = parse_noise_kind(noise);
      if (latent_steps) rc.latent_steps = *latent_steps;
      if (tau) rc.sampler.tau_g = *tau;
      rc.sampler.validate();
      require_rollout_budget(params.config, ids.size(), rc.latent_steps, rc.max_answer_len);
      for (std::size_t r = 0; r < n_rollouts; ++r) {
        Rng rng = Rng::stream({seed, 0x1A5C, r});
        const auto traj = generate_trajectory(params, ids, rc.latent_steps, rc.sampler, rc.max_answer_len, rng);
        out << "rollout " << r + 1 << " (noise " << to_string(rc.sampler.noise_kind) << ", tau_g " << rc.sampler.tau_g
            << ")\n";
        print_trace(out, traj, vocab);
      }
      return kExitOk;
    });
  }

  if (plots->parsed()) {
    return guarded(err, [&] {
      const fs::path dest = output.empty() ? fs::path(run_path) / "plots" : fs::path(output);
      export_plots(run_path, dest, window);
      out << "wrote " << dest.string() << '\n';
      return kExitOk;
    });
  }
  return kExitConfig;
}

}  // namespace lepo::cli
