// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// RunConfig: every knob of a run as one JSON tree. Files are merged over the
// defaults, unknown keys are rejected, and `dotted.path=value` overrides are
// applied last.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "lepo/error.hpp"
#include "lepo/model.hpp"
#include "lepo/objective.hpp"
#include "lepo/rollout.hpp"
#include "lepo/sampler.hpp"
#include "lepo/tasks.hpp"

namespace lepo {

using nlohmann::json;

struct TrainConfig {
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double warmup_ratio = 0.03;
  std::size_t group_size = 8;
  std::size_t batch_size = 8;
  std::size_t steps = 200;
  std::size_t epochs = 0;  // when > 0, steps = ceil(epochs · train_size / batch_size)
  std::size_t latent_steps = 4;
  double tau_g = 0.5;
  double beta = 1e-3;
  bool length_normalize = true;
  std::size_t max_answer_len = 6;
  ObjectiveMode mode = ObjectiveMode::lepo;
  // Supervised warm start standing in for a pretrained backbone; see README.
  std::size_t warmstart_steps = 200;
  std::size_t warmstart_batch = 16;
  double warmstart_lr = 1e-3;
  std::size_t workers = 1;
  std::size_t checkpoint_every = 50;
};

struct TaskConfig {
  TaskMixture mixture = default_mixture();
  std::size_t train_size = 512;
  std::size_t eval_size = 50;
};

struct EvalConfig {
  std::size_t k = 32;
  double temperature = 0.6;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: <output root>/<timestamp>
  ModelConfig model;
  SamplerConfig sampler;
  TrainConfig trainer;
  TaskConfig tasks;
  EvalConfig eval;

  std::size_t total_steps() const {
    if (trainer.epochs == 0) return trainer.steps;
    return (trainer.epochs * tasks.train_size + trainer.batch_size - 1) / trainer.batch_size;
  }

  ObjectiveConfig objective() const { return {trainer.beta, trainer.length_normalize, trainer.mode}; }

  /// Rollout settings for training, after the mode adjustments.
  RolloutConfig train_rollout() const {
    RolloutConfig r;
    r.latent_steps = trainer.latent_steps;
    r.max_answer_len = trainer.max_answer_len;
    r.sampler = sampler;
    r.sampler.tau_g = trainer.tau_g;
    return effective_rollout(r, trainer.mode);
  }

  RolloutConfig eval_rollout() const {
    RolloutConfig r = train_rollout();
    r.sampler.temperature = eval.temperature;
    return r;
  }

  void validate() const;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline json mixture_to_json(const TaskMixture& mixture) {
  json out = json::array();
  for (const auto& c : mixture) {
    out.push_back({{"kind", to_string(c.kind)},
                   {"min_difficulty", c.min_difficulty},
                   {"max_difficulty", c.max_difficulty},
                   {"weight", c.weight},
                   {"digits", c.digits}});
  }
  return out;
}

inline json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& s = c.sampler;
  const auto& t = c.trainer;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"model",
       {{"vocab_size", m.vocab_size},
        {"d_model", m.d_model},
        {"n_layers", m.n_layers},
        {"n_heads", m.n_heads},
        {"d_ff", m.d_ff},
        {"max_seq_len", m.max_seq_len},
        {"init_std", m.init_std}}},
      {"sampler",
       {{"top_k", s.top_k},
        {"top_p", s.top_p},
        {"temperature", s.temperature},
        {"noise_kind", to_string(s.noise_kind)},
        {"gaussian_sigma", s.gaussian_sigma},
        {"dirichlet_alpha", s.dirichlet_alpha},
        {"dirichlet_mix", s.dirichlet_mix}}},
      {"trainer",
       {{"learning_rate", t.learning_rate},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"weight_decay", t.weight_decay},
        {"warmup_ratio", t.warmup_ratio},
        {"group_size", t.group_size},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"epochs", t.epochs},
        {"latent_steps", t.latent_steps},
        {"tau_g", t.tau_g},
        {"beta", t.beta},
        {"length_normalize", t.length_normalize},
        {"max_answer_len", t.max_answer_len},
        {"mode", to_string(t.mode)},
        {"warmstart_steps", t.warmstart_steps},
        {"warmstart_batch", t.warmstart_batch},
        {"warmstart_lr", t.warmstart_lr},
        {"workers", t.workers},
        {"checkpoint_every", t.checkpoint_every}}},
      {"tasks",
       {{"mixture", mixture_to_json(c.tasks.mixture)},
        {"train_size", c.tasks.train_size},
        {"eval_size", c.tasks.eval_size}}},
      {"eval", {{"k", c.eval.k}, {"temperature", c.eval.temperature}}},
  };
}

namespace detail {

inline void reject_unknown_keys(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config field '" + path + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config field '" + full + "'");
    if (defaults.at(key).is_object()) reject_unknown_keys(value, defaults.at(key), full);
  }
}

template <class T>
T field(const json& tree, const std::string& path) {
  const json* node = &tree;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const auto key = path.substr(begin, dot - begin);
    if (!node->contains(key)) throw ConfigError("missing config field '" + path + "'");
    node = &node->at(key);
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!node->is_number_unsigned()) {
        if (node->is_number_integer() && node->get<long long>() >= 0) return static_cast<T>(node->get<long long>());
        throw ConfigError("config field '" + path + "' must be a nonnegative integer, got " + node->dump());
      }
    } else if constexpr (std::is_same_v<T, double>) {
      if (!node->is_number()) throw ConfigError("config field '" + path + "' must be a number, got " + node->dump());
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) throw ConfigError("config field '" + path + "' must be true or false, got " + node->dump());
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node->is_string()) throw ConfigError("config field '" + path + "' must be a string, got " + node->dump());
    }
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + path + "': " + e.what());
  }
}

template <class Fn>
auto parse_enum(const std::string& path, const std::string& value, Fn&& parse) {
  try {
    return parse(value);
  } catch (const ContractError& e) {
    throw ConfigError("config field '" + path + "': " + e.what());
  }
}

inline TaskMixture mixture_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("config field 'tasks.mixture' must be an array");
  TaskMixture out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string p = "tasks.mixture[" + std::to_string(i) + "]";
    const json defaults = mixture_to_json({MixtureComponent{}})[0];
    reject_unknown_keys(e, defaults, p);
    json merged = defaults;
    merged.update(e);
    const json wrapped{{"c", merged}};
    MixtureComponent c;
    c.kind = parse_enum(p + ".kind", field<std::string>(wrapped, "c.kind"), parse_task_kind);
    c.min_difficulty = field<std::size_t>(wrapped, "c.min_difficulty");
    c.max_difficulty = field<std::size_t>(wrapped, "c.max_difficulty");
    c.weight = field<double>(wrapped, "c.weight");
    c.digits = field<std::size_t>(wrapped, "c.digits");
    out.push_back(c);
  }
  return out;
}

inline void merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace detail

/// Reads a complete or partial config tree; absent fields keep defaults.
inline RunConfig from_json(const json& user) {
  const json defaults = to_json(RunConfig{});
  detail::reject_unknown_keys(user, defaults, "");
  json j = defaults;
  detail::merge(j, user);
  using detail::field;
  RunConfig c;
  c.seed = field<std::uint64_t>(j, "seed");
  c.output_dir = field<std::string>(j, "output_dir");
  c.model.vocab_size = field<std::size_t>(j, "model.vocab_size");
  c.model.d_model = field<std::size_t>(j, "model.d_model");
  c.model.n_layers = field<std::size_t>(j, "model.n_layers");
  c.model.n_heads = field<std::size_t>(j, "model.n_heads");
  c.model.d_ff = field<std::size_t>(j, "model.d_ff");
  c.model.max_seq_len = field<std::size_t>(j, "model.max_seq_len");
  c.model.init_std = field<double>(j, "model.init_std");
  c.sampler.top_k = field<std::size_t>(j, "sampler.top_k");
  c.sampler.top_p = field<double>(j, "sampler.top_p");
  c.sampler.temperature = field<double>(j, "sampler.temperature");
  c.sampler.noise_kind =
      detail::parse_enum("sampler.noise_kind", field<std::string>(j, "sampler.noise_kind"), parse_noise_kind);
  c.sampler.gaussian_sigma = field<double>(j, "sampler.gaussian_sigma");
  c.sampler.dirichlet_alpha = field<double>(j, "sampler.dirichlet_alpha");
  c.sampler.dirichlet_mix = field<double>(j, "sampler.dirichlet_mix");
  auto& t = c.trainer;
  t.learning_rate = field<double>(j, "trainer.learning_rate");
  t.adam_beta1 = field<double>(j, "trainer.adam_beta1");
  t.adam_beta2 = field<double>(j, "trainer.adam_beta2");
  t.adam_eps = field<double>(j, "trainer.adam_eps");
  t.weight_decay = field<double>(j, "trainer.weight_decay");
  t.warmup_ratio = field<double>(j, "trainer.warmup_ratio");
  t.group_size = field<std::size_t>(j, "trainer.group_size");
  t.batch_size = field<std::size_t>(j, "trainer.batch_size");
  t.steps = field<std::size_t>(j, "trainer.steps");
  t.epochs = field<std::size_t>(j, "trainer.epochs");
  t.latent_steps = field<std::size_t>(j, "trainer.latent_steps");
  t.tau_g = field<double>(j, "trainer.tau_g");
  t.beta = field<double>(j, "trainer.beta");
  t.length_normalize = field<bool>(j, "trainer.length_normalize");
  t.max_answer_len = field<std::size_t>(j, "trainer.max_answer_len");
  t.mode = detail::parse_enum("trainer.mode", field<std::string>(j, "trainer.mode"), parse_objective_mode);
  t.warmstart_steps = field<std::size_t>(j, "trainer.warmstart_steps");
  t.warmstart_batch = field<std::size_t>(j, "trainer.warmstart_batch");
  t.warmstart_lr = field<double>(j, "trainer.warmstart_lr");
  t.workers = field<std::size_t>(j, "trainer.workers");
  t.checkpoint_every = field<std::size_t>(j, "trainer.checkpoint_every");
  c.tasks.mixture = detail::mixture_from_json(j.at("tasks").at("mixture"));
  c.tasks.train_size = field<std::size_t>(j, "tasks.train_size");
  c.tasks.eval_size = field<std::size_t>(j, "tasks.eval_size");
  c.eval.k = field<std::size_t>(j, "eval.k");
  c.eval.temperature = field<double>(j, "eval.temperature");
  return c;
}

/// Applies `dotted.path=value`. The value is read as JSON when it parses and
/// as a bare string otherwise, so `trainer.mode=grpo_discrete` works.
inline void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form dotted.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &tree;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const auto key = path.substr(begin, dot - begin);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    begin = dot + 1;
  }
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  model.validate();
  try {
    sampler.validate();
  } catch (const ContractError& e) {
    fail(e.what());
  }
  const auto& t = trainer;
  if (!(t.learning_rate >= 0.0)) fail("trainer.learning_rate must be nonnegative");
  if (!(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0)) fail("trainer.adam_beta1 must lie in [0, 1)");
  if (!(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0)) fail("trainer.adam_beta2 must lie in [0, 1)");
  if (!(t.adam_eps > 0.0)) fail("trainer.adam_eps must be positive");
  if (!(t.weight_decay >= 0.0)) fail("trainer.weight_decay must be nonnegative");
  if (!(t.warmup_ratio >= 0.0 && t.warmup_ratio < 1.0)) fail("trainer.warmup_ratio must lie in [0, 1)");
  if (t.group_size < 2) fail("trainer.group_size must be at least 2");
  if (t.batch_size < 1) fail("trainer.batch_size must be at least 1");
  if (!(t.tau_g > 0.0)) fail("trainer.tau_g must be positive");
  if (!(t.beta >= 0.0)) fail("trainer.beta must be nonnegative");
  if (t.max_answer_len < 1) fail("trainer.max_answer_len must be at least 1");
  if (!(t.warmstart_lr >= 0.0)) fail("trainer.warmstart_lr must be nonnegative");
  if (t.warmstart_steps > 0 && t.warmstart_batch < 1) fail("trainer.warmstart_batch must be at least 1");
  if (t.workers < 1) fail("trainer.workers must be at least 1");
  if (total_steps() < 1) fail("trainer.steps (or trainer.epochs) must give at least one step");
  validate_mixture(tasks.mixture);
  if (tasks.train_size < 1) fail("tasks.train_size must be at least 1");
  if (tasks.eval_size < 1) fail("tasks.eval_size must be at least 1");
  if (eval.k < 1) fail("eval.k must be at least 1");
  if (!(eval.temperature > 0.0)) fail("eval.temperature must be positive");
  try {
    Vocabulary check(model.vocab_size);
  } catch (const ConfigError& e) {
    fail(std::string("model.vocab_size: ") + e.what());
  }
  const std::size_t query = max_query_length(tasks.mixture);
  const std::size_t latent = train_rollout().latent_steps;
  if (query + latent + t.max_answer_len > model.max_seq_len) {
    fail("max query length (" + std::to_string(query) + ") + trainer.latent_steps (" + std::to_string(latent) +
         ") + trainer.max_answer_len (" + std::to_string(t.max_answer_len) + ") exceeds model.max_seq_len (" +
         std::to_string(model.max_seq_len) + ")");
  }
  if (max_target_length(tasks.mixture) > t.max_answer_len) {
    fail("trainer.max_answer_len (" + std::to_string(t.max_answer_len) + ") is too short for the longest answer (" +
         std::to_string(max_target_length(tasks.mixture)) + " tokens with markers)");
  }
}

inline RunConfig parse_run_config(const json& tree) {
  RunConfig c = from_json(tree);
  c.validate();
  return c;
}

inline json load_config_tree(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  json tree = json::parse(is, nullptr, false, true);
  if (tree.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
  return tree;
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  json tree = load_config_tree(path);
  for (const auto& o : overrides) apply_override(tree, o);
  return parse_run_config(tree);
}

}  // namespace lepo
