// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

#include "lepo/error.hpp"

namespace lepo {

/// Seeded random stream. Independent streams are derived by hashing a list of
/// integer coordinates, e.g. (seed, step, query_index, rollout_index), so that
/// results never depend on which worker ran first.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix(seed)) {}

  static Rng stream(std::initializer_list<std::uint64_t> coordinates) {
    std::uint64_t h = 0x243F6A8885A308D3ULL;
    for (auto c : coordinates) h = splitmix(h ^ splitmix(c + 0x9E3779B97F4A7C15ULL));
    Rng r;
    r.engine_.seed(h);
    return r;
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below needs a positive bound");
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw FormatError("corrupt rng state");
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace lepo
