// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token generation from a next-token distribution: Gumbel-Softmax latent
// tokens, nucleus/top-k discrete draws, and the alternate noise families used
// for ablations.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lepo/error.hpp"
#include "lepo/rng.hpp"

namespace lepo {

enum class NoiseKind { gumbel, gaussian, dirichlet, none };

inline std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::gumbel: return "gumbel";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::dirichlet: return "dirichlet";
    case NoiseKind::none: return "none";
  }
  return "unknown";
}

inline NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "gumbel") return NoiseKind::gumbel;
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "dirichlet") return NoiseKind::dirichlet;
  if (name == "none") return NoiseKind::none;
  throw ContractError("unknown noise kind '" + name + "'");
}

struct SamplerConfig {
  double tau_g = 0.5;         // Gumbel-Softmax temperature
  std::size_t top_k = 30;     // 0 keeps the whole vocabulary
  double top_p = 0.95;
  NoiseKind noise_kind = NoiseKind::gumbel;
  double temperature = 1.0;   // logit temperature applied by the model
  double gaussian_sigma = 1.0;
  double dirichlet_alpha = 1.0;
  double dirichlet_mix = 0.5;

  void validate() const {
    require(tau_g > 0.0, "sampler.tau_g must be positive");
    require(top_p > 0.0 && top_p <= 1.0, "sampler.top_p must lie in (0, 1]");
    require(temperature > 0.0, "sampler.temperature must be positive");
    require(gaussian_sigma >= 0.0, "sampler.gaussian_sigma must be nonnegative");
    require(dirichlet_alpha > 0.0, "sampler.dirichlet_alpha must be positive");
    require(dirichlet_mix >= 0.0 && dirichlet_mix <= 1.0, "sampler.dirichlet_mix must lie in [0, 1]");
  }
};

inline constexpr double kSimplexTolerance = 1e-6;
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kUniformClamp = 1e-12;

/// A point on the vocabulary simplex used in place of a discrete token.
struct LatentToken {
  std::vector<double> z;

  bool on_simplex(double tol = kSimplexTolerance) const {
    if (z.empty()) return false;
    double s = 0.0;
    for (double v : z) {
      if (!(v >= 0.0)) return false;
      s += v;
    }
    return std::abs(s - 1.0) <= tol;
  }
};

struct GumbelNoise {
  std::vector<double> uniforms;
  std::vector<double> epsilon;

  static double transform(double u) {
    u = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
    return -std::log(-std::log(u));
  }

  static GumbelNoise from_uniforms(std::vector<double> u) {
    GumbelNoise noise;
    noise.epsilon.reserve(u.size());
    for (double& v : u) {
      v = std::clamp(v, kUniformClamp, 1.0 - kUniformClamp);
      noise.epsilon.push_back(transform(v));
    }
    noise.uniforms = std::move(u);
    return noise;
  }

  static GumbelNoise zeros(std::size_t n) {
    GumbelNoise noise;
    noise.uniforms.assign(n, std::exp(-1.0));
    noise.epsilon.assign(n, 0.0);
    return noise;
  }
};

inline void require_simplex(std::span<const double> pi, const char* what) {
  double s = 0.0;
  for (double v : pi) {
    if (!(v >= 0.0)) throw ContractError(std::string(what) + ": negative or NaN probability");
    s += v;
  }
  if (pi.empty() || std::abs(s - 1.0) > kSimplexTolerance) {
    throw ContractError(std::string(what) + ": distribution does not sum to 1 (sum=" + std::to_string(s) + ")");
  }
}

/// Index of the largest entry; lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Shannon entropy in nats.
inline double entropy(std::span<const double> pi) {
  double h = 0.0;
  for (double p : pi) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

namespace detail {

// softmax(scores / tau) with max subtraction.
inline std::vector<double> tempered_softmax(std::vector<double> scores, double tau) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp((s - mx) / tau);
    total += s;
  }
  for (double& s : scores) s /= total;
  return scores;
}

inline std::vector<double> floored_log(std::span<const double> pi) {
  std::vector<double> out(pi.size());
  for (std::size_t k = 0; k < pi.size(); ++k) out[k] = std::log(std::max(pi[k], kProbabilityFloor));
  return out;
}

}  // namespace detail

inline GumbelNoise sample_gumbel_noise(Rng& rng, std::size_t size) {
  std::vector<double> u(size);
  for (auto& v : u) v = rng.uniform();
  return GumbelNoise::from_uniforms(std::move(u));
}

/// z_k ∝ exp((log π_k + ε_k) / τ_g).
inline LatentToken gumbel_softmax(std::span<const double> pi, const GumbelNoise& noise, double tau_g) {
  require(tau_g > 0.0, "gumbel_softmax: tau_g must be positive");
  require_simplex(pi, "gumbel_softmax");
  if (noise.epsilon.size() != pi.size()) {
    throw DimensionError("gumbel_softmax: noise of size " + std::to_string(noise.epsilon.size()) +
                         " for distribution of size " + std::to_string(pi.size()));
  }
  auto scores = detail::floored_log(pi);
  for (std::size_t k = 0; k < scores.size(); ++k) scores[k] += noise.epsilon[k];
  return {detail::tempered_softmax(std::move(scores), tau_g)};
}

/// Top-k then top-p truncation, renormalized. Returned weights are indexed by
/// token id; truncated entries are zero.
inline std::vector<double> truncated_distribution(std::span<const double> pi, const SamplerConfig& cfg) {
  const std::size_t n = pi.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pi[a] > pi[b]; });
  std::size_t keep = n;
  if (cfg.top_k > 0 && cfg.top_k < n) keep = cfg.top_k;
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += pi[order[i]];
  std::vector<double> out(n, 0.0);
  if (!(kept_mass > 0.0)) {
    out[argmax(pi)] = 1.0;
    return out;
  }
  double cumulative = 0.0;
  std::size_t nucleus = 0;
  while (nucleus < keep) {
    cumulative += pi[order[nucleus]] / kept_mass;
    ++nucleus;
    if (cumulative >= cfg.top_p) break;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < nucleus; ++i) mass += pi[order[i]];
  for (std::size_t i = 0; i < nucleus; ++i) out[order[i]] = pi[order[i]] / mass;
  return out;
}

inline std::size_t sample_discrete(std::span<const double> pi, const SamplerConfig& cfg, Rng& rng) {
  const auto weights = truncated_distribution(pi, cfg);
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = argmax(weights);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    cumulative += weights[k];
    last_positive = k;
    if (u < cumulative) return k;
  }
  return last_positive;  // rounding left u just above the final cumulative
}

/// Gaussian, Dirichlet, or no-noise latent tokens.
inline LatentToken alternate_noise_latent(std::span<const double> pi, const SamplerConfig& cfg, Rng& rng) {
  require_simplex(pi, "alternate_noise_latent");
  switch (cfg.noise_kind) {
    case NoiseKind::none:
      return {std::vector<double>(pi.begin(), pi.end())};
    case NoiseKind::gaussian: {
      require(cfg.tau_g > 0.0, "alternate_noise_latent: tau_g must be positive");
      auto scores = detail::floored_log(pi);
      for (double& s : scores) s += cfg.gaussian_sigma * rng.normal();
      return {detail::tempered_softmax(std::move(scores), cfg.tau_g)};
    }
    case NoiseKind::dirichlet: {
      std::vector<double> d(pi.size());
      double total = 0.0;
      for (double& v : d) {
        v = rng.gamma(cfg.dirichlet_alpha);
        total += v;
      }
      std::vector<double> z(pi.size());
      double zsum = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const double dk = total > 0.0 ? d[k] / total : 1.0 / static_cast<double>(z.size());
        z[k] = cfg.dirichlet_mix * pi[k] + (1.0 - cfg.dirichlet_mix) * dk;
        zsum += z[k];
      }
      for (double& v : z) v /= zsum;
      return {std::move(z)};
    }
    case NoiseKind::gumbel:
      break;
  }
  throw ContractError("alternate_noise_latent: kind '" + to_string(cfg.noise_kind) + "' is not an alternate noise");
}

/// Latent token under the configured noise family.
inline LatentToken sample_latent(std::span<const double> pi, const SamplerConfig& cfg, Rng& rng) {
  if (cfg.noise_kind == NoiseKind::gumbel) return gumbel_softmax(pi, sample_gumbel_noise(rng, pi.size()), cfg.tau_g);
  return alternate_noise_latent(pi, cfg, rng);
}

}  // namespace lepo
