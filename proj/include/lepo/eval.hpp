// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: k rollouts per problem, pass@1 (mean per-sample correctness),
// pass@k, entropy and length statistics, and the base-accuracy histogram.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lepo/error.hpp"
#include "lepo/model.hpp"
#include "lepo/parallel.hpp"
#include "lepo/rollout.hpp"
#include "lepo/tasks.hpp"

namespace lepo {

inline constexpr std::array<double, 5> kDifficultyEdges{0.0, 0.2, 0.5, 0.8, 1.0};
inline constexpr std::size_t kDifficultyBins = kDifficultyEdges.size() - 1;

/// Bins are [lo, hi) except the last, which is closed.
inline std::size_t difficulty_bin(double accuracy) {
  require(accuracy >= 0.0 && accuracy <= 1.0, "difficulty_bin: accuracy outside [0, 1]");
  for (std::size_t b = 0; b + 1 < kDifficultyBins; ++b)
    if (accuracy < kDifficultyEdges[b + 1]) return b;
  return kDifficultyBins - 1;
}

inline std::string bin_label(std::size_t b) {
  std::ostringstream os;
  os << '[' << kDifficultyEdges[b] << ',' << kDifficultyEdges[b + 1] << (b + 1 == kDifficultyBins ? ']' : ')');
  return os.str();
}

struct ProblemResult {
  std::size_t problem_id = 0;
  TaskKind kind = TaskKind::add_chain;
  std::size_t difficulty = 0;
  std::string query;
  std::vector<int> correct;  // one entry per sample
  double entropy_mean = 0.0;
  double tokens_mean = 0.0;
  std::size_t distinct_answers = 0;

  double base_accuracy() const {
    if (correct.empty()) return 0.0;
    return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / static_cast<double>(correct.size());
  }
};

struct Summary {
  std::size_t problems = 0;
  double pass_at_1 = 0.0;
  double pass_at_k = 0.0;
  double mean_at_k = 0.0;  // same quantity as pass_at_1, reported under both names
  double entropy_mean = 0.0;
  double tokens_mean = 0.0;
};

struct EvalReport {
  std::size_t k = 0;
  std::vector<ProblemResult> problems;
  Summary aggregate;
  std::map<std::string, Summary> per_kind;
  std::vector<double> pass_curve;  // pass@j for j = 1..k
  std::array<std::size_t, kDifficultyBins> histogram{};
};

/// Probability that j samples drawn without replacement from n, of which c
/// are correct, include a correct one: 1 - C(n-c, j) / C(n, j).
inline double pass_at_j(std::size_t n, std::size_t c, std::size_t j) {
  require(j >= 1 && j <= n && c <= n, "pass_at_j: need 1 <= j <= n and c <= n");
  if (n - c < j) return 1.0;
  double miss = 1.0;
  for (std::size_t i = 0; i < j; ++i) miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - miss;
}

/// pass@1 and pass@k of a problems × samples correctness matrix.
inline Summary summarize(std::span<const ProblemResult> problems) {
  Summary s;
  s.problems = problems.size();
  if (problems.empty()) return s;
  for (const auto& p : problems) {
    s.pass_at_1 += p.base_accuracy();
    s.pass_at_k += std::count(p.correct.begin(), p.correct.end(), 1) > 0 ? 1.0 : 0.0;
    s.entropy_mean += p.entropy_mean;
    s.tokens_mean += p.tokens_mean;
  }
  const double n = static_cast<double>(problems.size());
  s.pass_at_1 /= n;
  s.pass_at_k /= n;
  s.entropy_mean /= n;
  s.tokens_mean /= n;
  s.mean_at_k = s.pass_at_1;
  return s;
}

/// Structural checks every report must pass: pass@k >= pass@1, a monotone
/// pass@j curve from pass@1 to pass@k, and histogram counts summing to the
/// problem count.
inline void check_consistency(const EvalReport& r) {
  constexpr double kSlack = 1e-12;
  if (r.aggregate.pass_at_k + kSlack < r.aggregate.pass_at_1) {
    throw ContractError("eval report: pass@k " + std::to_string(r.aggregate.pass_at_k) + " < pass@1 " +
                        std::to_string(r.aggregate.pass_at_1));
  }
  for (std::size_t j = 1; j < r.pass_curve.size(); ++j) {
    if (r.pass_curve[j] + kSlack < r.pass_curve[j - 1]) {
      throw ContractError("eval report: pass@j decreases at j=" + std::to_string(j + 1));
    }
  }
  if (!r.pass_curve.empty()) {
    if (std::abs(r.pass_curve.front() - r.aggregate.pass_at_1) > 1e-9 ||
        std::abs(r.pass_curve.back() - r.aggregate.pass_at_k) > 1e-9) {
      throw ContractError("eval report: pass@j curve endpoints disagree with pass@1 / pass@k");
    }
  }
  std::size_t total = 0;
  for (auto c : r.histogram) total += c;
  if (total != r.problems.size()) throw ContractError("eval report: histogram counts do not sum to problem count");
}

/// Builds the report from per-problem results and checks it.
inline EvalReport assemble_report(std::vector<ProblemResult> problems, std::size_t k) {
  EvalReport r;
  r.k = k;
  r.problems = std::move(problems);
  r.aggregate = summarize(r.problems);
  std::map<std::string, std::vector<ProblemResult>> by_kind;
  for (const auto& p : r.problems) {
    require(p.correct.size() == k, "assemble_report: every problem needs exactly k samples");
    by_kind[to_string(p.kind)].push_back(p);
    ++r.histogram[difficulty_bin(p.base_accuracy())];
  }
  for (const auto& [kind, ps] : by_kind) r.per_kind[kind] = summarize(ps);
  if (!r.problems.empty()) {
    for (std::size_t j = 1; j <= k; ++j) {
      double total = 0.0;
      for (const auto& p : r.problems) {
        const auto c = static_cast<std::size_t>(std::count(p.correct.begin(), p.correct.end(), 1));
        total += pass_at_j(k, c, j);
      }
      r.pass_curve.push_back(total / static_cast<double>(r.problems.size()));
    }
  }
  check_consistency(r);
  return r;
}

/// k rollouts per problem with `cfg` (its sampler should carry the
/// evaluation temperature). Streams are keyed by (seed, problem, sample).
inline EvalReport evaluate(const ModelParams& params, std::span<const TaskInstance> dataset, std::size_t k,
                           const RolloutConfig& cfg, std::uint64_t seed, std::size_t workers = 1) {
  require(k >= 1, "evaluate: k must be at least 1");
  std::vector<ProblemResult> results(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t p) {
    const auto& inst = dataset[p];
    ProblemResult r;
    r.problem_id = p;
    r.kind = inst.kind;
    r.difficulty = inst.difficulty;
    r.query = inst.query;
    std::set<std::vector<std::size_t>> answers;
    for (std::size_t s = 0; s < k; ++s) {
      Rng rng = Rng::stream({seed, 0xE7A1, p, s});
      const auto t = generate_trajectory(params, inst.query_ids, cfg.latent_steps, cfg.sampler, cfg.max_answer_len, rng);
      r.correct.push_back(reward(t.answer_ids, inst) > 0.5 ? 1 : 0);
      r.entropy_mean += t.mean_entropy();
      r.tokens_mean += static_cast<double>(t.answer_length());
      answers.insert(t.answer_ids);
    }
    r.entropy_mean /= static_cast<double>(k);
    r.tokens_mean /= static_cast<double>(k);
    r.distinct_answers = answers.size();
    results[p] = std::move(r);
  });
  return assemble_report(std::move(results), k);
}

// ---------------------------------------------------------------------------
// Difficulty redistribution

struct DifficultyShift {
  std::array<double, kDifficultyEdges.size()> edges = kDifficultyEdges;
  std::array<std::size_t, kDifficultyBins> before{};
  std::array<std::size_t, kDifficultyBins> after{};
  std::array<long, kDifficultyBins> delta{};
};

/// Histogram of base accuracies for accuracy vectors over the same problems.
inline DifficultyShift difficulty_shift(std::span<const double> before, std::span<const double> after) {
  require(before.size() == after.size(), "difficulty_shift: reports cover different problem counts");
  DifficultyShift s;
  for (double a : before) ++s.before[difficulty_bin(a)];
  for (double a : after) ++s.after[difficulty_bin(a)];
  for (std::size_t b = 0; b < kDifficultyBins; ++b) {
    s.delta[b] = static_cast<long>(s.after[b]) - static_cast<long>(s.before[b]);
  }
  return s;
}

inline DifficultyShift difficulty_shift(const EvalReport& a, const EvalReport& b) {
  if (a.problems.size() != b.problems.size()) {
    throw ContractError("difficulty_shift: reports cover " + std::to_string(a.problems.size()) + " and " +
                        std::to_string(b.problems.size()) + " problems");
  }
  std::vector<double> acc_a, acc_b;
  for (std::size_t i = 0; i < a.problems.size(); ++i) {
    if (a.problems[i].query != b.problems[i].query || a.problems[i].kind != b.problems[i].kind) {
      throw ContractError("difficulty_shift: problem " + std::to_string(i) + " differs between reports");
    }
    acc_a.push_back(a.problems[i].base_accuracy());
    acc_b.push_back(b.problems[i].base_accuracy());
  }
  return difficulty_shift(acc_a, acc_b);
}

// ---------------------------------------------------------------------------
// Entropy profile

struct EntropyProfile {
  std::vector<double> latent;    // mean entropy at latent step t
  std::vector<double> discrete;  // mean entropy at answer step t, over rollouts that reached it
  double latent_mean = 0.0;
  double discrete_mean = 0.0;
};

inline EntropyProfile rollout_entropy_profile(const ModelParams& params, std::span<const TaskInstance> sample,
                                              const RolloutConfig& cfg, std::uint64_t seed) {
  EntropyProfile out;
  out.latent.assign(cfg.latent_steps, 0.0);
  std::vector<double> discrete_sum(cfg.max_answer_len, 0.0);
  std::vector<std::size_t> discrete_count(cfg.max_answer_len, 0);
  double lat_total = 0.0, dis_total = 0.0;
  std::size_t lat_n = 0, dis_n = 0;
  for (std::size_t p = 0; p < sample.size(); ++p) {
    Rng rng = Rng::stream({seed, 0xE4B0, p});
    const auto t = generate_trajectory(params, sample[p].query_ids, cfg.latent_steps, cfg.sampler, cfg.max_answer_len, rng);
    const auto h = t.step_entropies();
    for (std::size_t s = 0; s < h.size(); ++s) {
      if (s < t.latent_length()) {
        out.latent[s] += h[s];
        lat_total += h[s];
        ++lat_n;
      } else {
        discrete_sum[s - t.latent_length()] += h[s];
        ++discrete_count[s - t.latent_length()];
        dis_total += h[s];
        ++dis_n;
      }
    }
  }
  if (!sample.empty())
    for (auto& v : out.latent) v /= static_cast<double>(sample.size());
  for (std::size_t s = 0; s < discrete_sum.size() && discrete_count[s] > 0; ++s) {
    out.discrete.push_back(discrete_sum[s] / static_cast<double>(discrete_count[s]));
  }
  out.latent_mean = lat_n ? lat_total / static_cast<double>(lat_n) : 0.0;
  out.discrete_mean = dis_n ? dis_total / static_cast<double>(dis_n) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json summary_json(const Summary& s, std::size_t k) {
  return {{"problems", s.problems},
          {"pass@1", s.pass_at_1},
          {"pass@" + std::to_string(k), s.pass_at_k},
          {"mean@" + std::to_string(k), s.mean_at_k},
          {"entropy_mean", s.entropy_mean},
          {"tokens_mean", s.tokens_mean}};
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json kinds = nlohmann::json::object();
  for (const auto& [kind, s] : r.per_kind) kinds[kind] = summary_json(s, r.k);
  nlohmann::json hist = nlohmann::json::array();
  for (std::size_t b = 0; b < kDifficultyBins; ++b) hist.push_back({{"bin", bin_label(b)}, {"count", r.histogram[b]}});
  nlohmann::json problems = nlohmann::json::array();
  for (const auto& p : r.problems) {
    problems.push_back({{"problem_id", p.problem_id},
                        {"kind", to_string(p.kind)},
                        {"difficulty", p.difficulty},
                        {"query", p.query},
                        {"base_accuracy", p.base_accuracy()},
                        {"distinct_answers", p.distinct_answers}});
  }
  return {{"k", r.k},          {"aggregate", summary_json(r.aggregate, r.k)}, {"per_kind", kinds},
          {"pass_curve", r.pass_curve}, {"histogram", hist}, {"problems", problems}};
}

inline nlohmann::json shift_json(const DifficultyShift& s) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t b = 0; b < kDifficultyBins; ++b) {
    bins.push_back({{"bin", bin_label(b)}, {"before", s.before[b]}, {"after", s.after[b]}, {"delta", s.delta[b]}});
  }
  return {{"edges", s.edges}, {"bins", bins}};
}

/// Flat per-problem table, sorted by problem_id.
inline void write_report_csv(const EvalReport& r, std::ostream& os) {
  os << "problem_id,kind,difficulty,base_accuracy,bin\n";
  for (const auto& p : r.problems) {
    os << p.problem_id << ',' << to_string(p.kind) << ',' << p.difficulty << ',' << p.base_accuracy() << ','
       << bin_label(difficulty_bin(p.base_accuracy())) << '\n';
  }
}

inline void write_report(const EvalReport& r, const std::filesystem::path& json_path,
                         const std::filesystem::path& csv_path) {
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  std::ofstream js(json_path);
  std::ofstream cs(csv_path);
  if (!js || !cs) throw FormatError("cannot write eval report to '" + json_path.string() + "'");
  js << report_json(r).dump(2) << '\n';
  write_report_csv(r, cs);
}

}  // namespace lepo
