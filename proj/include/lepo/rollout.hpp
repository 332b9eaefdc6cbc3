// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hybrid rollouts: L_g latent steps, each feeding back the expectation
// embedding of a noisy latent token, followed by sampled discrete tokens.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepo/model.hpp"
#include "lepo/parallel.hpp"
#include "lepo/rng.hpp"
#include "lepo/sampler.hpp"
#include "lepo/tasks.hpp"

namespace lepo {

inline constexpr double kAdvantageStdFloor = 1e-8;

struct Trajectory {
  std::vector<std::size_t> query_ids;
  std::vector<LatentToken> latent_tokens;
  std::vector<std::size_t> answer_ids;
  double reward = 0.0;
  // π at every generation step (latent steps first), recorded for replay
  // checks and analysis
  std::vector<std::vector<double>> step_distributions;

  std::size_t latent_length() const { return latent_tokens.size(); }
  std::size_t answer_length() const { return answer_ids.size(); }
  std::size_t total_length() const { return latent_tokens.size() + answer_ids.size(); }

  std::vector<double> step_entropies() const {
    std::vector<double> out;
    out.reserve(step_distributions.size());
    for (const auto& pi : step_distributions) out.push_back(entropy(pi));
    return out;
  }

  double mean_entropy() const {
    const auto h = step_entropies();
    return h.empty() ? 0.0 : std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
  }

  bool terminated() const { return !answer_ids.empty() && answer_ids.back() == Vocabulary::kEos; }
};

struct RolloutGroup {
  std::vector<std::size_t> query_ids;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;

  std::vector<double> rewards() const {
    std::vector<double> r;
    for (const auto& t : trajectories) r.push_back(t.reward);
    return r;
  }
};

struct RolloutConfig {
  std::size_t latent_steps = 4;  // L_g
  std::size_t max_answer_len = 6;
  SamplerConfig sampler;
};

inline void require_rollout_budget(const ModelConfig& model, std::size_t query_len, std::size_t latent_steps,
                                   std::size_t max_answer_len) {
  if (query_len + latent_steps + max_answer_len > model.max_seq_len) {
    throw CapacityError("query (" + std::to_string(query_len) + ") + L_g (" + std::to_string(latent_steps) +
                        ") + max_answer_len (" + std::to_string(max_answer_len) + ") exceeds max_seq_len " +
                        std::to_string(model.max_seq_len));
  }
}

/// One hybrid trajectory. Reward is left at 0 for the caller to fill.
inline Trajectory generate_trajectory(const ModelParams& params, std::span<const std::size_t> query_ids,
                                      std::size_t latent_steps, const SamplerConfig& sampler,
                                      std::size_t max_answer_len, Rng& rng) {
  require(!query_ids.empty(), "generate_trajectory: empty query");
  require(max_answer_len >= 1, "generate_trajectory: max_answer_len must be at least 1");
  sampler.validate();
  require_rollout_budget(params.config, query_ids.size(), latent_steps, max_answer_len);

  Trajectory traj;
  traj.query_ids.assign(query_ids.begin(), query_ids.end());
  DecodeCache cache(params);
  std::vector<double> logits;
  for (auto id : query_ids) logits = cache.step(cache.token_input(id));

  for (std::size_t t = 0; t < latent_steps; ++t) {
    auto pi = distribution_from_logits(logits, sampler.temperature);
    LatentToken z = sample_latent(pi, sampler, rng);
    logits = cache.step(cache.latent_input(z));
    traj.step_distributions.push_back(std::move(pi));
    traj.latent_tokens.push_back(std::move(z));
  }
  for (std::size_t t = 0; t < max_answer_len; ++t) {
    auto pi = distribution_from_logits(logits, sampler.temperature);
    const std::size_t token = sample_discrete(pi, sampler, rng);
    traj.step_distributions.push_back(std::move(pi));
    traj.answer_ids.push_back(token);
    if (token == Vocabulary::kEos) break;
    if (t + 1 < max_answer_len) logits = cache.step(cache.token_input(token));
  }
  return traj;
}

/// Â_i = (r_i - mean) / std with the population std; all zero when std < 1e-8.
inline std::vector<double> compute_advantages(std::span<const double> rewards) {
  require(rewards.size() >= 2, "compute_advantages: a group needs at least 2 rollouts");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (std < kAdvantageStdFloor) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std;
  return out;
}

/// Stream for one rollout; independent of which worker runs it.
inline Rng rollout_stream(std::uint64_t seed, std::uint64_t step, std::uint64_t query_index,
                          std::uint64_t rollout_index) {
  return Rng::stream({seed, step, query_index, rollout_index});
}

/// G scored rollouts of `instance` with advantages filled in.
inline RolloutGroup rollout_group(const ModelParams& params, const TaskInstance& instance, std::size_t group_size,
                                  const RolloutConfig& cfg, std::uint64_t seed, std::uint64_t step,
                                  std::uint64_t query_index, std::size_t workers = 1) {
  require(group_size >= 2, "rollout_group: group size must be at least 2");
  RolloutGroup group;
  group.query_ids = instance.query_ids;
  group.trajectories.resize(group_size);
  parallel_for(group_size, workers, [&](std::size_t i) {
    Rng rng = rollout_stream(seed, step, query_index, i);
    auto traj = generate_trajectory(params, instance.query_ids, cfg.latent_steps, cfg.sampler, cfg.max_answer_len, rng);
    traj.reward = reward(traj.answer_ids, instance);
    group.trajectories[i] = std::move(traj);
  });
  group.advantages = compute_advantages(group.rewards());
  return group;
}

/// One group per instance, in instance order.
inline std::vector<RolloutGroup> rollout_batch(const ModelParams& params, std::span<const TaskInstance> batch,
                                               std::size_t group_size, const RolloutConfig& cfg, std::uint64_t seed,
                                               std::uint64_t step, std::size_t workers = 1) {
  std::vector<RolloutGroup> groups(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t q) {
    groups[q] = rollout_group(params, batch[q], group_size, cfg, seed, step, q);
  });
  return groups;
}

// ---------------------------------------------------------------------------
// Replay

/// Input sequence that reproduces a trajectory under teacher forcing: query
/// tokens, expectation embeddings of the stored latents, then every answer
/// token except the last.
inline EmbeddingSequence trajectory_inputs(const ModelParams& params, const Trajectory& traj) {
  auto seq = embed_tokens(params, traj.query_ids);
  seq = append(seq, embed_latents(params, traj.latent_tokens, seq.length()));
  if (traj.answer_ids.size() > 1) {
    const std::span<const std::size_t> fed(traj.answer_ids.data(), traj.answer_ids.size() - 1);
    seq = append(seq, embed_tokens(params, fed, seq.length(), InputOrigin::discrete_token));
  }
  return seq;
}

/// Log-probabilities for every generated step, [T×|V|] with latent steps
/// first, under `temperature`.
inline Tensor replay_log_probs(const ModelParams& params, const Trajectory& traj, double temperature) {
  require(temperature > 0.0, "replay: temperature must be positive");
  require(traj.total_length() > 0, "replay: trajectory generated nothing");
  const Tensor logits = forward_logits(params, trajectory_inputs(params, traj));
  const std::size_t first = traj.query_ids.size() - 1;
  Tensor rows = slice_rows(logits, first, first + traj.total_length());
  if (temperature != 1.0) rows = scale(rows, 1.0 / temperature);
  return log_softmax(rows);
}

// ---------------------------------------------------------------------------
// Dumps

inline nlohmann::json trajectory_json(const Trajectory& traj, const Vocabulary& vocab, std::size_t top = 5) {
  nlohmann::json latents = nlohmann::json::array();
  for (const auto& z : traj.latent_tokens) {
    std::vector<std::size_t> order(z.z.size());
    std::iota(order.begin(), order.end(), 0);
    const auto keep = std::min(top, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return z.z[a] > z.z[b] || (z.z[a] == z.z[b] && a < b); });
    nlohmann::json step = nlohmann::json::array();
    for (std::size_t i = 0; i < keep; ++i) step.push_back({vocab.symbol(order[i]), z.z[order[i]]});
    latents.push_back(std::move(step));
  }
  return {{"query_ids", traj.query_ids},
          {"latent_top", latents},
          {"answer_ids", traj.answer_ids},
          {"answer", vocab.detokenize(traj.answer_ids)},
          {"reward", traj.reward}};
}

inline void write_trajectories(std::ostream& os, std::span<const RolloutGroup> groups, const Vocabulary& vocab) {
  for (const auto& g : groups)
    for (const auto& t : g.trajectories) os << trajectory_json(t, vocab).dump() << '\n';
}

}  // namespace lepo
