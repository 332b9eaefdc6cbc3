// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: rollout groups, LEPO loss, AdamW with a cosine schedule.
// Every random draw comes from a stream keyed by (seed, step, ...), so the
// position in the random sequence is fully described by the step counter and
// a checkpoint restores it exactly.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepo/archive.hpp"
#include "lepo/config.hpp"
#include "lepo/model.hpp"
#include "lepo/objective.hpp"
#include "lepo/rollout.hpp"
#include "lepo/tasks.hpp"

namespace lepo {

/// Linear warmup over ceil(warmup_ratio · total) steps, then cosine decay to
/// zero at `total`.
inline double cosine_lr(std::size_t step, std::size_t total, double warmup_ratio, double base_lr) {
  require(step <= total, "cosine_lr: step beyond total_steps");
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// AdamW

struct OptimizerState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  static OptimizerState for_params(const ModelParams& params) {
    OptimizerState s;
    for (const auto& t : params.tensors()) {
      s.m.emplace_back(t.size(), 0.0);
      s.v.emplace_back(t.size(), 0.0);
    }
    return s;
  }
};

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.99, eps = 1e-8, weight_decay = 0.1;
};

/// Global L2 norm of the gradients held by `params`.
inline double gradient_norm(const ModelParams& params) {
  double s = 0.0;
  for (const auto& t : params.tensors())
    for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

/// One AdamW step with decoupled weight decay. Decay applies to matrices
/// only; gains, biases and other vectors are left alone.
inline void adamw_update(ModelParams& params, OptimizerState& state, const AdamHyper& h, double lr) {
  auto tensors = params.tensors();
  require(state.m.size() == tensors.size(), "adamw_update: optimizer state does not match the parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i];
    auto w = t.mutable_data();
    const auto g = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = t.rank() >= 2 ? h.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
      w[j] -= lr * (update + decay * w[j]);
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double reward_mean = 0.0;
  double loss_total = 0.0;
  double j_latent = 0.0;
  double j_discrete = 0.0;
  double kl = 0.0;
  double entropy_mean = 0.0;
  double tokens_mean = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  bool aborted = false;
  std::string diagnostic;

  json to_json() const {
    json j{{"type", "step"},       {"step", step},           {"lr", lr},
           {"reward_mean", reward_mean}, {"loss_total", loss_total}, {"j_latent", j_latent},
           {"j_discrete", j_discrete},   {"kl", kl},                 {"entropy_mean", entropy_mean},
           {"tokens_mean", tokens_mean}, {"grad_norm", grad_norm},   {"wall_ms", wall_ms},
           {"aborted", aborted}};
    if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
    return j;
  }

  static std::string csv_header() {
    return "step,lr,reward_mean,loss_total,j_latent,j_discrete,kl,entropy_mean,tokens_mean,grad_norm,wall_ms,aborted";
  }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << step << ',' << lr << ',' << reward_mean << ',' << loss_total << ',' << j_latent << ',' << j_discrete << ','
       << kl << ',' << entropy_mean << ',' << tokens_mean << ',' << grad_norm << ',' << wall_ms << ','
       << (aborted ? 1 : 0);
    return os.str();
  }
};

/// Line-delimited JSON metrics with the resolved config as the first record,
/// plus a CSV mirror.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& dir, const RunConfig& cfg, bool append = false) {
    std::filesystem::create_directories(dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    jsonl_.open(dir / "metrics.jsonl", std::ios::out | mode);
    csv_.open(dir / "metrics.csv", std::ios::out | mode);
    if (!jsonl_ || !csv_) throw FormatError("cannot open metrics files in '" + dir.string() + "'");
    if (!append) {
      jsonl_ << json{{"type", "config"}, {"config", to_json(cfg)}}.dump() << '\n';
      csv_ << MetricsRecord::csv_header() << '\n';
    }
    jsonl_.flush();
    csv_.flush();
  }

  void write(const MetricsRecord& r) {
    jsonl_ << r.to_json().dump() << '\n';
    csv_ << r.csv_row() << '\n';
    jsonl_.flush();
    csv_.flush();
  }

 private:
  std::ofstream jsonl_, csv_;
};

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)),
        vocab_(cfg_.model.vocab_size),
        params_(ModelParams::init(cfg_.model, cfg_.seed)),
        reference_(snapshot_reference(params_)),
        optimizer_(OptimizerState::for_params(params_)) {
    cfg_.validate();
    train_set_ = make_dataset(vocab_, cfg_.tasks.mixture, cfg_.tasks.train_size, cfg_.seed);
  }

  const RunConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const ModelParams& reference() const { return reference_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  const std::vector<TaskInstance>& train_set() const { return train_set_; }
  std::size_t steps_done() const { return step_; }
  std::size_t total_steps() const { return cfg_.total_steps(); }
  bool prepared() const { return prepared_; }
  bool finished() const { return step_ >= total_steps(); }

  /// Supervised warm start on the canonical answers, then the reference
  /// snapshot. Runs once; later calls do nothing.
  double prepare() {
    if (prepared_) return warmstart_loss_;
    warmstart_loss_ = warm_start();
    reference_ = snapshot_reference(params_);
    optimizer_ = OptimizerState::for_params(params_);
    prepared_ = true;
    return warmstart_loss_;
  }

  /// Instances used at `step`: consecutive slices of a per-epoch shuffle.
  std::vector<TaskInstance> batch_for_step(std::size_t step) const {
    const std::size_t n = train_set_.size(), b = cfg_.trainer.batch_size;
    std::vector<TaskInstance> batch;
    std::size_t cached_epoch = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t flat = step * b + i;
      const std::size_t epoch = flat / n;
      if (epoch != cached_epoch) {
        order = epoch_order(epoch);
        cached_epoch = epoch;
      }
      batch.push_back(train_set_[order[flat % n]]);
    }
    return batch;
  }

  /// One RL update. A non-finite loss or gradient leaves the parameters and
  /// optimizer untouched and is reported through `aborted`.
  MetricsRecord step() {
    require(!finished(), "Trainer::step: all steps are done");
    prepare();
    const auto start = std::chrono::steady_clock::now();
    MetricsRecord rec;
    rec.step = step_;
    rec.lr = cosine_lr(step_, total_steps(), cfg_.trainer.warmup_ratio, cfg_.trainer.learning_rate);

    const auto batch = batch_for_step(step_);
    const auto rollout = cfg_.train_rollout();
    const auto groups =
        rollout_batch(params_, batch, cfg_.trainer.group_size, rollout, cfg_.seed, step_, cfg_.trainer.workers);
    summarize_rollouts(groups, rec);

    params_.zero_grad();
    try {
      Tape tape;
      LossBreakdown loss;
      {
        TapeScope scope(tape);
        loss = lepo_loss(groups, params_, reference_, cfg_.objective(), rollout.sampler.temperature);
      }
      rec.loss_total = loss.total();
      rec.j_latent = loss.j_latent;
      rec.j_discrete = loss.j_discrete;
      rec.kl = loss.kl_term;
      if (loss.total_loss.requires_grad()) tape.backward(loss.total_loss);
      rec.grad_norm = gradient_norm(params_);
      if (!std::isfinite(rec.grad_norm)) throw NumericError("non-finite gradient norm");
    } catch (const NumericError& e) {
      rec.aborted = true;
      rec.diagnostic = e.what();
      params_.zero_grad();
    }
    // a zero gradient carries no signal; skipping keeps weight decay from
    // moving the parameters on all-equal batches
    if (!rec.aborted && rec.grad_norm > 0.0) {
      adamw_update(params_, optimizer_, adam_hyper(), rec.lr);
    }
    params_.zero_grad();
    ++step_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

  // -------------------------------------------------------------------------
  // Checkpoints

  void save(const std::filesystem::path& path) const {
    Archive a;
    a.set("kind", "trainer");
    a.set("config", to_json(cfg_).dump());
    write_model_config(a, cfg_.model);
    a.set("steps_done", std::to_string(step_));
    a.set("prepared", prepared_ ? "1" : "0");
    a.set("optimizer_step", std::to_string(optimizer_.step));
    // the random position is (seed, steps_done); recorded for auditing
    a.set("rng_seed", std::to_string(cfg_.seed));
    a.set("rng_step", std::to_string(step_));
    std::ostringstream ws;
    ws.precision(17);
    ws << warmstart_loss_;
    a.set("warmstart_loss", ws.str());
    write_params(a, params_, "policy/");
    write_params(a, reference_, "reference/");
    const auto named = params_.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      a.add("adam_m/" + named[i].first, Tensor(named[i].second.shape(), optimizer_.m[i]));
      a.add("adam_v/" + named[i].first, Tensor(named[i].second.shape(), optimizer_.v[i]));
    }
    save_archive(a, path);
  }

  static Trainer load(const std::filesystem::path& path) {
    const Archive a = load_archive(path);
    if (a.get("kind") != "trainer") throw FormatError("checkpoint field 'kind' is '" + a.get("kind") + "', not trainer");
    json tree = json::parse(a.get("config"), nullptr, false);
    if (tree.is_discarded()) throw FormatError("checkpoint field 'config' is not valid JSON");
    RunConfig cfg;
    try {
      cfg = parse_run_config(tree);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint field 'config': ") + e.what());
    }
    Trainer t(cfg);
    t.params_ = read_params(a, cfg.model, "policy/", true);
    t.reference_ = read_params(a, cfg.model, "reference/", false);
    t.step_ = parse_count(a, "steps_done");
    t.prepared_ = a.get("prepared") == "1";
    t.warmstart_loss_ = std::stod(a.get("warmstart_loss"));
    t.optimizer_ = OptimizerState::for_params(t.params_);
    t.optimizer_.step = parse_count(a, "optimizer_step");
    const auto named = t.params_.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      for (auto [prefix, target] : {std::pair{"adam_m/", &t.optimizer_.m[i]}, std::pair{"adam_v/", &t.optimizer_.v[i]}}) {
        const Tensor& stored = a.tensor(prefix + named[i].first);
        if (stored.shape() != named[i].second.shape()) {
          throw FormatError("tensor '" + std::string(prefix) + named[i].first + "' has the wrong shape");
        }
        target->assign(stored.data().begin(), stored.data().end());
      }
    }
    return t;
  }

 private:
  AdamHyper adam_hyper() const {
    return {cfg_.trainer.adam_beta1, cfg_.trainer.adam_beta2, cfg_.trainer.adam_eps, cfg_.trainer.weight_decay};
  }

  static std::size_t parse_count(const Archive& a, const std::string& key) {
    const auto& s = a.get(key);
    try {
      return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
      throw FormatError("checkpoint field '" + key + "' is not a count: '" + s + "'");
    }
  }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(train_set_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::stream({cfg_.seed, 0xE90C, epoch});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
  }

  static void summarize_rollouts(const std::vector<RolloutGroup>& groups, MetricsRecord& rec) {
    double reward = 0.0, ent = 0.0, tokens = 0.0;
    std::size_t n = 0;
    for (const auto& g : groups) {
      for (const auto& t : g.trajectories) {
        reward += t.reward;
        ent += t.mean_entropy();
        tokens += static_cast<double>(t.answer_length());
        ++n;
      }
    }
    rec.reward_mean = reward / static_cast<double>(n);
    rec.entropy_mean = ent / static_cast<double>(n);
    rec.tokens_mean = tokens / static_cast<double>(n);
  }

  /// Cross-entropy on ANSWER, answer, EOS after the query and a latent
  /// prefix drawn the way training rollouts draw it.
  double warm_start() {
    const auto& t = cfg_.trainer;
    if (t.warmstart_steps == 0) return 0.0;
    const auto rollout = cfg_.train_rollout();
    OptimizerState state = OptimizerState::for_params(params_);
    const AdamHyper hyper{t.adam_beta1, t.adam_beta2, t.adam_eps, 0.0};
    double last = 0.0;
    for (std::size_t s = 0; s < t.warmstart_steps; ++s) {
      Rng chooser = Rng::stream({cfg_.seed, 0x5F7A, s});
      std::vector<Trajectory> examples;
      for (std::size_t i = 0; i < t.warmstart_batch; ++i) {
        const auto& inst = train_set_[chooser.below(train_set_.size())];
        Rng rng = Rng::stream({cfg_.seed, 0x5F7B, s, i});
        Trajectory traj =
            generate_trajectory(params_, inst.query_ids, rollout.latent_steps, rollout.sampler, 1, rng);
        traj.answer_ids = inst.target_ids();
        examples.push_back(std::move(traj));
      }
      params_.zero_grad();
      Tape tape;
      Tensor loss = Tensor::scalar(0.0);
      {
        TapeScope scope(tape);
        for (const auto& ex : examples) {
          const Tensor lp = replay_log_probs(params_, ex, rollout.sampler.temperature);
          const Tensor answer_rows = slice_rows(lp, ex.latent_length(), ex.total_length());
          const double w = 1.0 / static_cast<double>(examples.size() * ex.answer_length());
          loss = add(loss, scale(sum(pick(answer_rows, ex.answer_ids)), -w));
        }
      }
      tape.backward(loss);
      last = loss.item();
      adamw_update(params_, state, hyper, t.warmstart_lr);
      params_.zero_grad();
    }
    return last;
  }

  RunConfig cfg_;
  Vocabulary vocab_;
  ModelParams params_;
  ModelParams reference_;
  OptimizerState optimizer_;
  std::vector<TaskInstance> train_set_;
  std::size_t step_ = 0;
  bool prepared_ = false;
  double warmstart_loss_ = 0.0;
};

}  // namespace lepo
