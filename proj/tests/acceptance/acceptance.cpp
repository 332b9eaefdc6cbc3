// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line with
// its measured quantities; `--criterion N` runs a subset.

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lepo/cli.hpp"
#include "lepo/eval.hpp"
#include "lepo/objective.hpp"
#include "lepo/trainer.hpp"
#include "support/finite_difference.hpp"

namespace lepo::acceptance {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

/// Positive, non-degenerate distribution over n tokens.
std::vector<double> random_pi(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = 0.05 + rng.uniform());
  for (auto& x : v) x /= s;
  return v;
}

ModelParams perturbed(const ModelParams& p, double sigma, std::uint64_t seed) {
  ModelParams out = p.copy(false);
  Rng rng(seed);
  for (auto t : out.tensors())
    for (auto& x : t.mutable_data()) x += sigma * rng.normal();
  return out;
}

RunConfig add_chain_desk(std::uint64_t seed = 0) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.tasks.mixture = single_task_mixture(TaskKind::add_chain, 2);
  cfg.validate();
  return cfg;
}

/// Mean per-token KL(policy ‖ reference) over the policy's own rollouts on
/// a fixed problem set.
double measured_kl(const ModelParams& policy, const ModelParams& reference, const RunConfig& cfg) {
  NoGradScope off;
  const auto problems = make_dataset(Vocabulary(cfg.model.vocab_size), cfg.tasks.mixture, 16, 0xC1);
  const auto rollout = cfg.train_rollout();
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    for (std::size_t r = 0; r < 4; ++r) {
      Rng rng = Rng::stream({0xC1, p, r});
      const auto t = generate_trajectory(policy, problems[p].query_ids, rollout.latent_steps, rollout.sampler,
                                         rollout.max_answer_len, rng);
      total += kl_sum(replay_log_probs(policy, t, rollout.sampler.temperature),
                      replay_log_probs(reference, t, rollout.sampler.temperature))
                   .item();
      tokens += t.total_length();
    }
  }
  return total / static_cast<double>(tokens);
}

// 1. Full loss against central differences.
Outcome gradient_fidelity() {
  constexpr double kStep = 1e-5, kTolerance = 1e-4, kFloor = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig mc;
    mc.vocab_size = 16;
    mc.d_model = 8;
    mc.n_layers = 1 + seed % 2;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.max_seq_len = 16;
    mc.init_std = 0.4;
    const auto params = ModelParams::init(mc, seed);
    const auto reference = perturbed(params, 0.05, seed + 100);
    SamplerConfig sampler;
    sampler.top_k = 16;
    sampler.top_p = 1.0;
    std::vector<RolloutGroup> groups;
    for (std::size_t q = 0; q < 2; ++q) {
      RolloutGroup g;
      g.query_ids = {1, 5 + q, 9, 4};
      for (std::size_t i = 0; i < 3; ++i) {
        Rng rng = Rng::stream({seed, q, i});
        auto t = generate_trajectory(params, g.query_ids, 3, sampler, 3, rng);
        t.reward = static_cast<double>((i + q) % 2);
        g.trajectories.push_back(std::move(t));
      }
      g.advantages = compute_advantages(g.rewards());
      groups.push_back(std::move(g));
    }
    ObjectiveConfig cfg;
    cfg.beta = 0.1;
    Tape tape;
    {
      TapeScope scope(tape);
      backward(lepo_loss(groups, params, reference, cfg, 1.0).total_loss);
    }
    auto tensors = params.tensors();
    const auto result = testing::check_gradients(
        tensors,
        [&] {
          NoGradScope off;
          return lepo_loss(groups, params, reference, cfg, 1.0).total();
        },
        kStep, 1, kFloor);
    worst = std::max(worst, result.max_rel_error);
    checked += result.checked;
  }
  return {worst < kTolerance, "max rel err " + fmt(worst) + " over " + std::to_string(checked) +
                                  " coordinates, 5 seeds (need < 1e-4)"};
}

// 2. Latent objective with one-hot labels equals the discrete objective.
Outcome one_hot_reduction() {
  constexpr double kTolerance = 1e-12;
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.below(6), v = 2 + rng.below(30);
    std::vector<double> logits(rows * v);
    for (auto& x : logits) x = 2.0 * rng.normal();
    std::vector<double> lp_values;
    {
      NoGradScope off;
      const Tensor lp = log_softmax(Tensor::matrix(rows, v, logits));
      lp_values.assign(lp.data().begin(), lp.data().end());
    }
    Tensor a = Tensor::parameter({rows, v}, lp_values);
    Tensor b = Tensor::parameter({rows, v}, lp_values);
    std::vector<std::size_t> ids(rows);
    std::vector<double> onehot(rows * v, 0.0);
    for (std::size_t t = 0; t < rows; ++t) {
      const auto pi = random_pi(rng, v);
      ids[t] = argmax(pi);
      onehot[t * v + ids[t]] = 1.0;
    }
    const double adv = rng.normal();
    Tape ta, tb;
    double va, vb;
    {
      TapeScope scope(ta);
      const Tensor out = latent_objective(a, Tensor::matrix(rows, v, onehot), adv);
      va = out.item();
      backward(out);
    }
    {
      TapeScope scope(tb);
      const Tensor out = discrete_objective(b, ids, adv);
      vb = out.item();
      backward(out);
    }
    worst = std::max(worst, std::abs(va - vb));
    for (std::size_t i = 0; i < rows * v; ++i) {
      const double ga = a.has_grad() ? a.grad()[i] : 0.0, gb = b.has_grad() ? b.grad()[i] : 0.0;
      worst = std::max(worst, std::abs(ga - gb));
    }
  }
  return {worst <= kTolerance, "max |difference| " + fmt(worst) + " over 200 cases (need <= 1e-12)"};
}

// 3. Argmax of Gumbel-perturbed log-probabilities is categorical in π.
Outcome gumbel_max() {
  constexpr int kDraws = 100'000;
  constexpr double kAlpha = 0.001;
  Rng rng(2026);
  const auto pi = random_pi(rng, 8);
  std::vector<double> counts(8, 0.0), scores(8);
  for (int i = 0; i < kDraws; ++i) {
    const auto noise = sample_gumbel_noise(rng, 8);
    for (std::size_t k = 0; k < 8; ++k) scores[k] = std::log(pi[k]) + noise.epsilon[k];
    counts[argmax(scores)] += 1.0;
  }
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    const double expected = kDraws * pi[k];
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  const double p_value = boost::math::gamma_q(7.0 / 2.0, chi2 / 2.0);
  return {p_value > kAlpha, "chi2 " + fmt(chi2) + " on 7 dof, p = " + fmt(p_value) + " (need > 0.001)"};
}

// 4. Low and high temperature limits of the relaxed sample.
Outcome temperature_limits() {
  constexpr int kDraws = 100'000;
  Rng rng(404);
  const auto pi = random_pi(rng, 8);
  int peaked = 0, flat = 0;
  double widest = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const auto cold = gumbel_softmax(pi, sample_gumbel_noise(rng, 8), 0.01);
    peaked += *std::max_element(cold.z.begin(), cold.z.end()) > 0.999;
    const auto hot = gumbel_softmax(pi, sample_gumbel_noise(rng, 8), 100.0);
    const auto [lo, hi] = std::minmax_element(hot.z.begin(), hot.z.end());
    widest = std::max(widest, *hi - *lo);
    flat += *hi - *lo < 0.01;
  }
  const double rate = peaked / static_cast<double>(kDraws);
  // P(max > 0.999) at τ needs the top perturbed score to lead by τ·ln 999
  const double shrink = std::exp(-0.01 * std::log(999.0));
  double predicted = 0.0;
  for (double p : pi) predicted += p * shrink / (p * shrink + 1.0 - p);
  const bool cold_ok = rate > 0.99, hot_ok = widest < 0.01;
  return {cold_ok && hot_ok, "tau 0.01: max > 0.999 in " + fmt(rate, 5) + " of draws (need > 0.99; lead-gap bound " +
                                 fmt(predicted, 5) + "); tau 100: max-min < 0.01 in " + fmt(flat / static_cast<double>(kDraws), 5) +
                                 " of draws, worst " + fmt(widest) + " (need < 0.01 on every draw)"};
}

// 5. Group advantages are standardized, all-equal groups give zeros.
Outcome advantage_normalization() {
  constexpr double kTolerance = 1e-10;
  Rng rng(55);
  double worst_mean = 0.0, worst_std = 0.0;
  int cases = 0;
  bool zeros_ok = true;
  while (cases < 1000) {
    const std::size_t g = 2 + rng.below(31);
    std::vector<double> r(g);
    for (auto& x : r) x = cases % 2 ? static_cast<double>(rng.below(2)) : 3.0 * rng.normal();
    double m = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(g), var = 0.0;
    for (double x : r) var += (x - m) * (x - m);
    if (var / static_cast<double>(g) <= 0.0) continue;
    const auto a = compute_advantages(r);
    double am = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(g), av = 0.0;
    for (double x : a) av += (x - am) * (x - am);
    worst_mean = std::max(worst_mean, std::abs(am));
    worst_std = std::max(worst_std, std::abs(std::sqrt(av / static_cast<double>(g)) - 1.0));
    ++cases;
  }
  for (std::size_t g = 2; g <= 32; ++g) {
    const double value = rng.normal();
    for (double x : compute_advantages(std::vector<double>(g, value))) zeros_ok = zeros_ok && x == 0.0;
  }
  return {worst_mean < kTolerance && worst_std < kTolerance && zeros_ok,
          "1000 cases: max |mean| " + fmt(worst_mean) + ", max |std - 1| " + fmt(worst_std) +
              (zeros_ok ? "; all-equal groups give zeros" : "; all-equal groups gave nonzero advantages")};
}

// 6. Training reward rises on two-operand addition.
Outcome trainability() {
  constexpr std::size_t kWindow = 20;
  constexpr double kRequiredGain = 0.2;
  const RunConfig cfg = add_chain_desk(0);
  Trainer trainer(cfg);
  trainer.prepare();
  const auto init_profile = rollout_entropy_profile(trainer.params(), cli::eval_set(cfg), cfg.train_rollout(), 0);
  std::vector<double> rewards;
  std::size_t aborted = 0;
  while (!trainer.finished()) {
    const auto rec = trainer.step();
    rewards.push_back(rec.reward_mean);
    aborted += rec.aborted;
  }
  const double start = std::accumulate(rewards.begin(), rewards.begin() + kWindow, 0.0) / kWindow;
  const double end = std::accumulate(rewards.end() - kWindow, rewards.end(), 0.0) / kWindow;
  const auto trained_profile = rollout_entropy_profile(trainer.params(), cli::eval_set(cfg), cfg.train_rollout(), 0);
  return {end - start >= kRequiredGain && aborted == 0,
          "reward moving average " + fmt(start) + " (steps 0-19) -> " + fmt(end) + " (steps 180-199), gain " +
              fmt(end - start) + " (need >= 0.2); latent entropy " + fmt(init_profile.latent_mean) + " -> " +
              fmt(trained_profile.latent_mean)};
}

// 7. Stochastic latents explore more than deterministic ones at init.
Outcome exploration_ordering() {
  constexpr double kRequiredShare = 0.95;
  const Vocabulary vocab;
  const auto params = ModelParams::init(ModelConfig{}, 0);
  const auto problems = make_dataset(vocab, default_mixture(), 50, 0x7E57);
  std::size_t wins = 0;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    auto distinct = [&](NoiseKind kind) {
      RolloutConfig cfg;
      cfg.latent_steps = 4;
      cfg.sampler.tau_g = 0.5;
      cfg.sampler.noise_kind = kind;
      cfg.sampler.top_k = 1;  // greedy answers: only the latents can differ
      std::set<std::pair<std::vector<std::vector<double>>, std::vector<std::size_t>>> seen;
      const auto g = rollout_group(params, problems[p], 32, cfg, 0x7E57, 0, p);
      for (const auto& t : g.trajectories) {
        std::vector<std::vector<double>> latents;
        for (const auto& z : t.latent_tokens) latents.push_back(z.z);
        seen.emplace(std::move(latents), t.answer_ids);
      }
      return seen.size();
    };
    wins += distinct(NoiseKind::gumbel) > distinct(NoiseKind::none);
  }
  const double share = wins / static_cast<double>(problems.size());
  return {share >= kRequiredShare, std::to_string(wins) + "/50 problems strictly more distinct trajectory sets (need >= 95%)"};
}

// 8. Every evaluation report is internally consistent.
Outcome pass_at_k_consistency() {
  const RunConfig cfg = add_chain_desk(0);
  std::vector<std::pair<std::string, ModelParams>> models;
  models.emplace_back("init", ModelParams::init(cfg.model, 0));
  RunConfig short_cfg = cfg;
  short_cfg.trainer.warmstart_steps = 100;
  Trainer warm(short_cfg);
  warm.prepare();
  models.emplace_back("warm-started", warm.params().copy(false));
  std::ostringstream detail;
  bool ok = true;
  for (const auto& [name, params] : models) {
    for (double temperature : {0.6, 1.0}) {
      RunConfig run = cfg;
      run.eval.temperature = temperature;
      try {
        const auto r = evaluate(params, cli::eval_set(run), 32, run.eval_rollout(), 0);
        bool monotone = true;
        for (std::size_t j = 1; j < r.pass_curve.size(); ++j) monotone = monotone && r.pass_curve[j] >= r.pass_curve[j - 1];
        ok = ok && monotone && r.aggregate.pass_at_k >= r.aggregate.pass_at_1;
        detail << name << "@T" << temperature << " pass@1 " << fmt(r.aggregate.pass_at_1, 3) << " pass@32 "
               << fmt(r.aggregate.pass_at_k, 3) << "; ";
      } catch (const ContractError& e) {
        ok = false;
        detail << name << ": " << e.what() << "; ";
      }
    }
  }
  return {ok, detail.str()};
}

// 9. Resuming from a mid-run checkpoint reproduces the final parameters.
Outcome replay_determinism() {
  RunConfig cfg = add_chain_desk(9);
  cfg.trainer.steps = 16;
  cfg.trainer.warmstart_steps = 20;
  Trainer full(cfg);
  while (!full.finished()) full.step();

  Trainer first(cfg);
  for (int i = 0; i < 8; ++i) first.step();
  const auto path = std::filesystem::temp_directory_path() / "lepo_acceptance_resume.ckpt";
  first.save(path);
  Trainer resumed = Trainer::load(path);
  while (!resumed.finished()) resumed.step();
  std::filesystem::remove(path);
  const bool same = resumed.params().bit_equal(full.params()) && resumed.optimizer().m == full.optimizer().m &&
                    resumed.optimizer().v == full.optimizer().v;
  return {same, same ? "16 steps vs 8 + save/load + 8: parameters and moments bit-identical"
                     : "resumed run diverged from the uninterrupted run"};
}

// 10. A strong KL penalty keeps the policy nearer the reference.
Outcome kl_anchoring() {
  auto run = [](double beta) {
    RunConfig cfg = add_chain_desk(0);
    cfg.trainer.steps = 50;
    cfg.trainer.beta = beta;
    Trainer t(cfg);
    while (!t.finished()) t.step();
    return measured_kl(t.params(), t.reference(), cfg);
  };
  const double loose = run(0.0), tight = run(10.0);
  return {tight < loose, "mean per-token KL after 50 steps: beta 10 -> " + fmt(tight) + ", beta 0 -> " + fmt(loose)};
}

}  // namespace
}  // namespace lepo::acceptance

int main(int argc, char** argv) {
  using namespace lepo::acceptance;
  CLI::App app{"acceptance checks"};
  std::vector<int> selected;
  app.add_option("-c,--criterion", selected, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", 60.0, gradient_fidelity},
      {2, "one-hot reduction", 10.0, one_hot_reduction},
      {3, "gumbel-max equivalence", 10.0, gumbel_max},
      {4, "temperature limits", 10.0, temperature_limits},
      {5, "advantage normalization", 10.0, advantage_normalization},
      {6, "trainability", 900.0, trainability},
      {7, "exploration ordering", 300.0, exploration_ordering},
      {8, "pass@k consistency", 600.0, pass_at_k_consistency},
      {9, "replay determinism", 300.0, replay_determinism},
      {10, "kl anchoring", 600.0, kl_anchoring},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = seconds <= c.budget_seconds;
    const bool pass = outcome.pass && in_budget;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << c.id << "  " << c.name << ": "
              << outcome.detail << " [" << std::fixed << std::setprecision(1) << seconds << " s of "
              << c.budget_seconds << " s]" << std::defaultfloat << std::setprecision(6) << (in_budget ? "" : " over budget")
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
