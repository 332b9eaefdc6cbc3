// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The LEPO loss. Latent steps are scored against their sampled z as soft
// labels, discrete steps by plain REINFORCE, both weighted by the group
// advantage. An exact per-token KL to the frozen reference is added on top.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lepo/error.hpp"
#include "lepo/model.hpp"
#include "lepo/rollout.hpp"
#include "lepo/tensor.hpp"

namespace lepo {

enum class ObjectiveMode { lepo, grpo_discrete, deterministic_latent };

inline std::string to_string(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::lepo: return "lepo";
    case ObjectiveMode::grpo_discrete: return "grpo_discrete";
    case ObjectiveMode::deterministic_latent: return "deterministic_latent";
  }
  return "unknown";
}

inline ObjectiveMode parse_objective_mode(const std::string& name) {
  if (name == "lepo") return ObjectiveMode::lepo;
  if (name == "grpo_discrete") return ObjectiveMode::grpo_discrete;
  if (name == "deterministic_latent") return ObjectiveMode::deterministic_latent;
  throw ContractError("unknown mode '" + name + "' (expected lepo, grpo_discrete or deterministic_latent)");
}

struct ObjectiveConfig {
  double beta = 1e-3;
  bool length_normalize = true;
  ObjectiveMode mode = ObjectiveMode::lepo;

  void validate() const { require(beta >= 0.0, "objective.beta must be nonnegative"); }
};

/// The rollout settings a mode actually uses: no latent phase for the GRPO
/// baseline, noise-free latents for the deterministic baseline.
inline RolloutConfig effective_rollout(RolloutConfig cfg, ObjectiveMode mode) {
  if (mode == ObjectiveMode::grpo_discrete) cfg.latent_steps = 0;
  if (mode == ObjectiveMode::deterministic_latent) cfg.sampler.noise_kind = NoiseKind::none;
  return cfg;
}

struct LossBreakdown {
  Tensor total_loss = Tensor::scalar(0.0);
  double j_latent = 0.0;    // group-averaged, length-normalized
  double j_discrete = 0.0;  // group-averaged, length-normalized
  double kl_term = 0.0;     // mean per-token KL to the reference
  std::size_t tokens_counted = 0;

  double total() const { return total_loss.item(); }
};

/// Â · Σ_t Σ_k z_{t,k} · log π_{t,k}. `soft_labels` is treated as a constant.
inline Tensor latent_objective(const Tensor& log_probs, const Tensor& soft_labels, double advantage) {
  if (log_probs.shape() != soft_labels.shape() || log_probs.rank() != 2) {
    throw ContractError("latent_objective: log_probs " + shape_string(log_probs.shape()) + " vs soft labels " +
                        shape_string(soft_labels.shape()));
  }
  const std::size_t v = soft_labels.dim(1);
  for (std::size_t t = 0; t < soft_labels.dim(0); ++t) {
    require_simplex(soft_labels.data().subspan(t * v, v), "latent_objective soft label");
  }
  return scale(sum(mul(soft_labels.detach(), log_probs)), advantage);
}

/// Â · Σ_t log π_t(o_t).
inline Tensor discrete_objective(const Tensor& log_probs, std::span<const std::size_t> token_ids, double advantage) {
  if (log_probs.rank() != 2 || log_probs.dim(0) != token_ids.size()) {
    throw ContractError("discrete_objective: " + std::to_string(token_ids.size()) + " tokens for log_probs " +
                        shape_string(log_probs.shape()));
  }
  return scale(sum(pick(log_probs, token_ids)), advantage);
}

/// Σ over rows of KL(π_policy ‖ π_ref), exact over the vocabulary. The
/// reference side is a constant.
inline Tensor kl_sum(const Tensor& log_probs_policy, const Tensor& log_probs_reference) {
  if (log_probs_policy.shape() != log_probs_reference.shape() || log_probs_policy.rank() != 2) {
    throw ContractError("kl: policy positions " + shape_string(log_probs_policy.shape()) + " vs reference " +
                        shape_string(log_probs_reference.shape()));
  }
  return sum(mul(exp(log_probs_policy), sub(log_probs_policy, log_probs_reference.detach())));
}

/// Mean over positions of KL(π_policy ‖ π_ref).
inline Tensor kl_regularizer(const Tensor& log_probs_policy, const Tensor& log_probs_reference) {
  const Tensor total = kl_sum(log_probs_policy, log_probs_reference);
  return scale(total, 1.0 / static_cast<double>(log_probs_policy.dim(0)));
}

/// Stored latents of a trajectory as an [L_g×|V|] constant.
inline Tensor soft_label_matrix(const Trajectory& traj, std::size_t vocab_size) {
  std::vector<double> rows;
  rows.reserve(traj.latent_tokens.size() * vocab_size);
  for (const auto& z : traj.latent_tokens) rows.insert(rows.end(), z.z.begin(), z.z.end());
  return Tensor::matrix(traj.latent_tokens.size(), vocab_size, std::move(rows));
}

struct TrajectoryTerms {
  Tensor j_latent;
  Tensor j_discrete;
};

/// Latent and discrete objectives of one trajectory given its replayed
/// log-probabilities (latent rows first).
inline TrajectoryTerms trajectory_terms(const Tensor& log_probs, const Trajectory& traj, double advantage) {
  const std::size_t lg = traj.latent_length(), t = traj.total_length();
  TrajectoryTerms out{Tensor::scalar(0.0), Tensor::scalar(0.0)};
  if (lg > 0) {
    out.j_latent = latent_objective(slice_rows(log_probs, 0, lg), soft_label_matrix(traj, log_probs.dim(1)), advantage);
  }
  if (t > lg) out.j_discrete = discrete_objective(slice_rows(log_probs, lg, t), traj.answer_ids, advantage);
  return out;
}

/// Σ_t Σ_k z_{t,k} log π_{t,k} + Σ_t log π_t(o_t) under `params`.
inline double trajectory_log_likelihood(const ModelParams& params, const Trajectory& traj, double temperature) {
  NoGradScope off;
  const auto terms = trajectory_terms(replay_log_probs(params, traj, temperature), traj, 1.0);
  return terms.j_latent.item() + terms.j_discrete.item();
}

/// Loss over a batch of groups:
///   -(1/N) Σ_i (1/T_i) (J_latent,i + J_discrete,i) + β · KL
/// where N counts every trajectory in the batch and KL is the mean over all
/// generated positions. Must run inside a TapeScope for gradients.
inline LossBreakdown lepo_loss(std::span<const RolloutGroup> groups, const ModelParams& params,
                               const ModelParams& reference, const ObjectiveConfig& cfg, double temperature) {
  cfg.validate();
  std::size_t n = 0;
  for (const auto& g : groups) {
    require(g.advantages.size() == g.trajectories.size(), "lepo_loss: advantages not computed for a group");
    n += g.trajectories.size();
  }
  require(n > 0, "lepo_loss: empty batch");
  for (const auto& g : groups) {
    for (const auto& t : g.trajectories) {
      if (cfg.mode == ObjectiveMode::grpo_discrete && t.latent_length() > 0) {
        throw ContractError("lepo_loss: grpo_discrete mode received a trajectory with latent steps");
      }
    }
  }

  LossBreakdown out;
  std::vector<Tensor> policy_terms, kl_terms;
  double j_latent = 0.0, j_discrete = 0.0, kl_value = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      const auto& traj = g.trajectories[i];
      const double adv = g.advantages[i];
      out.tokens_counted += traj.total_length();
      const bool in_graph = adv != 0.0 || cfg.beta > 0.0;
      Tensor log_probs;
      if (in_graph) {
        log_probs = replay_log_probs(params, traj, temperature);
      } else {
        NoGradScope off;
        log_probs = replay_log_probs(params, traj, temperature);
      }
      if (adv != 0.0) {
        const double w = inv_n * (cfg.length_normalize ? 1.0 / static_cast<double>(traj.total_length()) : 1.0);
        const auto terms = trajectory_terms(log_probs, traj, adv);
        j_latent += w * terms.j_latent.item();
        j_discrete += w * terms.j_discrete.item();
        policy_terms.push_back(scale(add(terms.j_latent, terms.j_discrete), w));
      }
      // KL is always measured for reporting but only enters the graph when β > 0
      Tensor ref_log_probs;
      {
        NoGradScope off;
        ref_log_probs = replay_log_probs(reference, traj, temperature);
      }
      if (cfg.beta > 0.0) {
        kl_terms.push_back(kl_sum(log_probs, ref_log_probs));
      } else {
        NoGradScope off;
        kl_value += kl_sum(log_probs.detach(), ref_log_probs).item();
      }
    }
  }
  out.j_latent = j_latent;
  out.j_discrete = j_discrete;

  auto add_all = [](const std::vector<Tensor>& terms) {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& t : terms) acc = add(acc, t);
    return acc;
  };
  const Tensor objective = add_all(policy_terms);
  const double per_token = 1.0 / static_cast<double>(out.tokens_counted);
  const Tensor kl = scale(add_all(kl_terms), per_token);
  out.kl_term = cfg.beta > 0.0 ? kl.item() : kl_value * per_token;
  out.total_loss = add(scale(objective, -1.0), scale(kl, cfg.beta));
  return out;
}

inline LossBreakdown lepo_loss(const RolloutGroup& group, const ModelParams& params, const ModelParams& reference,
                               const ObjectiveConfig& cfg, double temperature) {
  return lepo_loss(std::span<const RolloutGroup>(&group, 1), params, reference, cfg, temperature);
}

}  // namespace lepo
