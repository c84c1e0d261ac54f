// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are pinned here and nowhere else.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "wagma/errors.hpp"
#include "wagma/harness.hpp"
#include "wagma/scenario.hpp"
#include "wagma/topology.hpp"

using namespace wagma;
using netsim::SimTime;

namespace {

constexpr double kDoubleSumTol = 1e-12;
constexpr double kSyncGammaTol = 1e-12;
constexpr double kParityLossRel = 0.10;
constexpr double kAccuracyPoints = 0.02;
constexpr double kThroughputRatio = 1.1;
constexpr double kAveragingTol = 1e-9;
constexpr double kFdTol = 1e-5;
constexpr std::uint32_t kScenarios = 1200;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

optim::OptimizerConfig optimizer(optim::Mode mode, std::uint32_t P, std::uint32_t S,
                                 std::optional<Iteration> tau, Iteration T, std::size_t b,
                                 double eta) {
  optim::OptimizerConfig c;
  c.mode = mode;
  c.P = P;
  c.S = S;
  c.tau = tau;
  c.T = T;
  c.b = b;
  c.eta.value = eta;
  return c;
}

Vec sgd_step(const Vec& w, const Vec& g, double eta) {
  Vec out(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) out[k] = w[k] + (-eta * g[k]);
  return out;
}

double norm_sq(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

std::vector<problems::BatchSampler> worker_samplers(const problems::Problem& p, std::uint32_t P,
                                                   std::size_t b, std::uint64_t seed) {
  const auto shards = problems::make_partition(p.sample_count(), P, seed);
  std::vector<problems::BatchSampler> out;
  for (Rank r = 0; r < P; ++r) out.emplace_back(shards[r], b, netsim::mix_seed(seed, 0x5a3b, r));
  return out;
}

// ---------------------------------------------------------------------------

Outcome a1_grouping_examples() {
  const std::vector<std::vector<Rank>> t0 = {{0, 1, 2, 3}, {4, 5, 6, 7}};
  const std::vector<std::vector<Rank>> t1 = {{0, 1, 4, 5}, {2, 3, 6, 7}};
  const bool ok = topology::compute_groups({8, 4, 0}).groups == t0 &&
                  topology::compute_groups({8, 4, 1}).groups == t1;
  return {ok, "compute_groups(8,4,0) and (8,4,1)"};
}

Outcome a2_partition() {
  std::uint64_t cases = 0;
  for (std::uint32_t P = 1; P <= 1024; P <<= 1) {
    const std::uint32_t L = topology::log2_exact(P);
    for (std::uint32_t S = 1; S <= P; S <<= 1) {
      for (Iteration t = 0; t < std::max<Iteration>(1, 4 * L); ++t) {
        const topology::GroupingParams params{P, S, t};
        const auto part = topology::compute_groups(params);
        const auto expect = oracle::union_find_groups(P, oracle::rotating_masks(P, S, t));
        bool ok = part.groups == expect && part.groups.size() == P / S;
        std::vector<int> seen(P, 0);
        for (const auto& g : part.groups) {
          ok = ok && g.size() == S;
          for (Rank r : g) ok = ok && seen[r]++ == 0;
        }
        ++cases;
        if (!ok) {
          return {false, "P=" + std::to_string(P) + " S=" + std::to_string(S) +
                             " t=" + std::to_string(t)};
        }
      }
    }
  }
  return {true, std::to_string(cases) + " (P,S,t) cases match union-find"};
}

Outcome a3_mixing() {
  std::uint64_t cases = 0, exact = 0;
  for (std::uint32_t P = 2; P <= 1024; P <<= 1) {
    const std::uint32_t L = topology::log2_exact(P);
    for (std::uint32_t S = 2; S <= P; S <<= 1) {
      const std::uint32_t ls = topology::log2_exact(S);
      for (Iteration t = 0; t < 4 * L; ++t) {
        ++cases;
        const topology::GroupingParams params{P, S, 0};
        if (!topology::mixing_reachable(params, t, L)) {
          return {false, "P=" + std::to_string(P) + " S=" + std::to_string(S) + " t=" +
                             std::to_string(t) + " not mixed in log2 P"};
        }
        if (L % ls != 0) continue;
        const std::uint64_t k = (L + ls - 1) / ls;
        const bool hit = topology::mixing_reachable(params, t, k) &&
                         (k == 1 || !topology::mixing_reachable(params, t, k - 1));
        // The knowledge-flow oracle is quadratic in P; cap it.
        const bool oracle_ok =
            P > 256 || (oracle::mixed_after(P, S, t, k) && (k == 1 || !oracle::mixed_after(P, S, t, k - 1)));
        if (!hit || !oracle_ok) {
          return {false, "P=" + std::to_string(P) + " S=" + std::to_string(S) + " t=" +
                             std::to_string(t) + " not mixed in exactly " + std::to_string(k)};
        }
        ++exact;
      }
    }
  }
  return {true, std::to_string(cases) + " cases, " + std::to_string(exact) +
                    " with exact ceil(log2 P / log2 S) iterations"};
}

Outcome a4_collective() {
  std::mt19937_64 rng(20240607);
  std::uint64_t instances = 0, timely = 0, stale = 0, bad = 0, int_runs = 0, dbl_runs = 0;
  double worst = 0.0;
  std::string first;
  for (std::uint32_t i = 0; i < kScenarios; ++i) {
    collective::ScenarioConfig c;
    const std::uint32_t Ps[] = {4, 8, 16};
    c.P = Ps[i % 3];
    c.S = 1u << (1 + rng() % topology::log2_exact(c.P));
    c.rounds = 3 + rng() % 14;
    if (rng() % 3 != 0) c.tau = 2 + rng() % 9;
    c.activation = true;
    c.integer_payloads = i % 2 == 0;
    c.dimension = 1 + rng() % 5;
    c.delays.base_compute = SimTime::from_micros(100 + rng() % 3000);
    c.delays.compute_jitter_max = SimTime::from_micros(rng() % 4000);
    c.delays.link_latency = SimTime::from_micros(20 + rng() % 2000);
    c.delays.link_jitter_max = SimTime::from_micros(rng() % 1500);
    if (rng() % 2 == 0) {
      c.delays.straggler = {static_cast<std::uint32_t>(1 + rng() % 3),
                            SimTime::from_micros(rng() % 10000), rng()};
    }
    c.seed = rng();
    collective::ScenarioReport rep;
    try {
      rep = collective::run_collective_scenario(c);
    } catch (const Error& e) {
      rep.faults.emplace_back(e.what());
    }
    (c.integer_payloads ? int_runs : dbl_runs)++;
    instances += rep.instances_completed;
    timely += rep.timely_instances;
    stale += rep.stale_instances;
    if (!c.integer_payloads) worst = std::max(worst, rep.max_relative_error);
    const bool ok = rep.ok() && (c.integer_payloads ? rep.max_relative_error == 0.0
                                                    : rep.max_relative_error <= kDoubleSumTol);
    if (!ok) {
      ++bad;
      if (first.empty()) {
        first = " first failure at scenario " + std::to_string(i) +
                (rep.faults.empty() ? std::string(" (sum)") : ": " + rep.faults.front());
      }
    }
  }
  std::ostringstream d;
  d << kScenarios << " schedules (" << int_runs << " integer, " << dbl_runs << " double), "
    << instances << " instances (" << timely << " timely, " << stale
    << " with stale members), worst double rel err " << worst << first;
  return {bad == 0 && instances > 0, d.str()};
}

Outcome a5_staleness() {
  const auto q = problems::make_quadratic(32, 10.0, 21, {.samples = 1024});
  std::ostringstream d;
  bool ok = true;
  for (Iteration tau : {2, 8, 10}) {
    netsim::DelayModel delays;
    delays.base_compute = SimTime::from_ms(1.0);
    delays.compute_jitter_max = SimTime::from_ms(2.0);
    delays.link_jitter_max = SimTime::from_micros(400);
    delays.straggler = {4, SimTime::from_ms(25.0), 77};
    std::uint64_t syncs = 0;
    bool identical = true;
    training::TrainingOptions opts;
    opts.on_row = [&](const training::MetricsRecord& row, const optim::Diagnostics&,
                      std::span<const Vec> reps) {
      if ((row.iteration + 1) % tau != 0) return;
      ++syncs;
      for (const auto& r : reps) identical = identical && r == reps[0];
    };
    std::int64_t staleness = -1;
    try {
      const auto res = training::run_training(
          optimizer(optim::Mode::kWagma, 16, 4, tau, 200, 1, 0.01), *q, delays, 5, opts);
      staleness = res.max_staleness;
    } catch (const Error& e) {
      d << "tau=" << tau << " threw " << e.what() << "; ";
      ok = false;
      continue;
    }
    // The collective layer alone, many more schedules.
    std::int64_t coll = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
      collective::ScenarioConfig c;
      c.P = 16;
      c.S = 4;
      c.rounds = 30;
      c.tau = tau;
      c.delays = delays;
      c.seed = s;
      const auto rep = collective::run_collective_scenario(c);
      ok = ok && rep.ok();
      coll = std::max(coll, rep.max_staleness);
    }
    const bool pass = staleness <= static_cast<std::int64_t>(tau) - 1 &&
                      coll <= static_cast<std::int64_t>(tau) - 1 && identical && syncs > 0;
    ok = ok && pass;
    d << "tau=" << tau << ": staleness train " << staleness << " collective " << coll << ", "
      << syncs << " syncs " << (identical ? "bit-identical" : "DIVERGENT") << "; ";
  }
  return {ok, d.str()};
}

Outcome a6_gamma() {
  const auto q = problems::make_quadratic(64, 10.0, 1);
  const double eta = 0.01;
  const Iteration tau = 10;
  netsim::DelayModel delays;
  delays.compute_jitter_max = SimTime::from_micros(500);
  delays.straggler = {2, SimTime::from_ms(4.0), 3};
  double gmax = 0.0, sync_worst = 0.0;
  training::TrainingOptions opts;
  opts.on_row = [&](const training::MetricsRecord& row, const optim::Diagnostics& d,
                    std::span<const Vec>) {
    gmax = std::max(gmax, row.gamma);
    if ((row.iteration + 1) % tau == 0) {
      sync_worst = std::max(sync_worst, row.gamma / std::max(1.0, norm_sq(d.mu)));
    }
  };
  training::run_training(optimizer(optim::Mode::kWagma, 16, 4, tau, 2000, 1, eta), *q, delays,
                         1, opts);
  // M-hat: per-sample gradient norms over a ball holding the whole trajectory.
  const Vec x0 = q->initial_point();
  const double radius = 2.0 * std::sqrt(norm_sq(Vec(*q->optimum())) + norm_sq(x0)) + 1.0;
  const double M = problems::estimate_M(*q, 4096, radius, 99);
  const double bound = optim::gamma_bound(16, eta, M, static_cast<double>(tau));
  const bool ok = gmax > 0.0 && gmax <= bound && sync_worst <= kSyncGammaTol;
  return {ok, fmt("max Gamma %.4g <= bound %.4g (M-hat %.4g)", gmax, bound, M) +
                  fmt(", worst sync Gamma/max(1,|mu|^2) %.3g", sync_worst)};
}

Outcome a7_parity() {
  // Sequential-SGD oracle first: one worker, same batch size, step size and
  // iteration count, written as a plain loop.
  const auto q = problems::make_quadratic(64, 10.0, 1);
  const Iteration T = 2000;
  const double eta = 0.01;
  std::vector<double> seq_gn;
  {
    problems::BatchSampler sampler(problems::make_partition(q->sample_count(), 1, 1)[0], 1,
                                   netsim::mix_seed(1, 0x5a3b, 0));
    Vec w = q->initial_point();
    for (Iteration t = 0; t < T; ++t) {
      w = sgd_step(w, q->batch_gradient(sampler.next(), w), eta);
      seq_gn.push_back(norm_sq(q->full_gradient(w)));
    }
  }
  // Level at T: mean over the final 10% of the run, where SGD sits at its
  // noise floor.
  double level = 0.0;
  for (Iteration t = T - T / 10; t < T; ++t) level += seq_gn[t];
  level /= static_cast<double>(T / 10);

  netsim::DelayModel delays;
  delays.compute_jitter_max = SimTime::from_micros(500);
  const auto w = training::run_training(optimizer(optim::Mode::kWagma, 16, 4, 10, T, 1, eta), *q,
                                        delays, 1);
  const auto a = training::run_training(optimizer(optim::Mode::kAllreduce, 16, 4, 10, T, 1, eta),
                                        *q, delays, 1);
  const double lw = w.rows.back().loss_mu, la = a.rows.back().loss_mu;
  const double rel = std::abs(lw - la) / la;
  const double gw = w.rows.back().grad_norm_sq_mu;
  const bool quad_ok = rel <= kParityLossRel && gw < level;

  const auto lp = problems::make_logistic(4096, 20, 1.0, 2);
  const auto lwr = training::run_training(optimizer(optim::Mode::kWagma, 16, 4, 10, 1500, 8, 0.5),
                                          *lp, delays, 2);
  const auto lar = training::run_training(
      optimizer(optim::Mode::kAllreduce, 16, 4, 10, 1500, 8, 0.5), *lp, delays, 2);
  const double acc_w = lwr.final_accuracy.value_or(0.0);
  const double acc_a = lar.final_accuracy.value_or(0.0);
  const bool log_ok = std::abs(acc_w - acc_a) <= kAccuracyPoints;
  return {quad_ok && log_ok,
          fmt("quadratic loss wagma %.5g vs allreduce %.5g (rel %.3f)", lw, la, rel) +
              fmt(", |grad|^2 %.4g < oracle %.4g", gw, level) +
              fmt(", logistic accuracy %.4f vs %.4f", acc_w, acc_a)};
}

Outcome a8_throughput() {
  const auto q = problems::make_quadratic(16, 10.0, 3);
  netsim::DelayModel delays;
  delays.base_compute = SimTime::from_ms(100.0);
  delays.link_latency = SimTime::from_ms(1.0);
  delays.straggler = {2, SimTime::from_ms(320.0), 7};
  const Iteration T = 200;
  auto per_iter = [&](optim::Mode m, std::uint32_t S, std::optional<Iteration> tau) {
    return training::run_training(optimizer(m, 64, S, tau, T, 1, 0.01), *q, delays, 3)
        .time_per_iteration_ms();
  };
  const double w = per_iter(optim::Mode::kWagma, 8, 10);
  const double l = per_iter(optim::Mode::kLocalSgd, 8, 1);
  const double a = per_iter(optim::Mode::kAllreduce, 8, 10);
  const bool ok = w < l && w < a && l / w >= kThroughputRatio;
  return {ok, fmt("ms/iteration wagma %.2f, local SGD %.2f, allreduce %.2f", w, l, a) +
                  fmt(" (speedup vs local %.2fx)", l / w)};
}

Outcome a9_reductions() {
  const auto q = problems::make_quadratic(64, 10.0, 1);
  const auto lp = problems::make_logistic(1024, 10, 1.0, 2);
  netsim::DelayModel delays;
  delays.compute_jitter_max = SimTime::from_micros(900);
  delays.link_jitter_max = SimTime::from_micros(300);
  delays.straggler = {1, SimTime::from_ms(3.0), 5};
  std::ostringstream d;

  // alpha = beta = false against local SGD.
  auto wc = optimizer(optim::Mode::kWagma, 16, 4, 10, 300, 1, 0.01);
  wc.alpha = wc.beta = false;
  const auto w = training::run_training(wc, *q, delays, 4);
  const auto l = training::run_training(optimizer(optim::Mode::kLocalSgd, 16, 4, 10, 300, 1, 0.01),
                                        *q, delays, 4);
  const bool local_ok = w.rows == l.rows && w.final_replicas == l.final_replicas;
  d << "alpha=beta=false vs local SGD " << (local_ok ? "bit-identical" : "DIFFER");

  // P = 1 against a single-process loop.
  bool seq_ok = true;
  {
    auto ss = worker_samplers(*lp, 1, 4, 8);
    Vec ref = lp->initial_point();
    std::vector<double> losses;
    for (Iteration t = 0; t < 200; ++t) {
      ref = sgd_step(ref, lp->batch_gradient(ss[0].next(), ref), 0.5);
      losses.push_back(lp->loss(ref));
    }
    for (auto m : {optim::Mode::kWagma, optim::Mode::kAllreduce, optim::Mode::kLocalSgd,
                   optim::Mode::kDpsgd, optim::Mode::kAdpsgd}) {
      const auto r = training::run_training(optimizer(m, 1, 1, 5, 200, 4, 0.5), *lp, delays, 8);
      seq_ok = seq_ok && r.final_replicas[0] == ref;
      for (Iteration t = 0; t < 200; ++t) seq_ok = seq_ok && r.rows[t].loss_mu == losses[t];
    }
  }
  d << "; P=1 vs sequential loop " << (seq_ok ? "bit-identical" : "DIFFER");

  // S = P with beta against per-step synchronous model averaging.
  double worst = 0.0;
  {
    const std::uint32_t P = 8;
    auto c = optimizer(optim::Mode::kWagma, P, P, std::nullopt, 150, 2, 0.3);
    c.alpha = false;
    c.beta = true;
    std::vector<Vec> means;
    training::TrainingOptions opts;
    opts.on_row = [&](const training::MetricsRecord&, const optim::Diagnostics&,
                      std::span<const Vec> reps) {
      means.emplace_back();
      for (const auto& r : reps) means.back().insert(means.back().end(), r.begin(), r.end());
    };
    training::run_training(c, *lp, delays, 9, opts);
    auto ss = worker_samplers(*lp, P, 2, 9);
    Vec ref = lp->initial_point();
    for (Iteration t = 0; t < 150; ++t) {
      Vec next(ref.size(), 0.0);
      for (Rank r = 0; r < P; ++r) {
        const Vec wp = sgd_step(ref, lp->batch_gradient(ss[r].next(), ref), 0.3);
        for (std::size_t k = 0; k < ref.size(); ++k) next[k] += wp[k] / P;
      }
      ref = next;
      for (Rank r = 0; r < P; ++r)
        for (std::size_t k = 0; k < ref.size(); ++k)
          worst = std::max(worst, std::abs(means[t][r * ref.size() + k] - ref[k]));
    }
  }
  d << fmt("; S=P beta vs per-step averaging max |diff| %.3g", worst);
  return {local_ok && seq_ok && worst <= kAveragingTol, d.str()};
}

Outcome a10_determinism() {
  const auto root = std::filesystem::temp_directory_path() / "wagma_acceptance_determinism";
  std::filesystem::remove_all(root);
  std::ostringstream d;
  bool ok = true;
  harness::RunConfig base;
  base.optimizer = optimizer(optim::Mode::kWagma, 16, 4, 6, 150, 2, 0.02);
  base.problem = problems::QuadraticSpec{32, 10.0, 512, 1.0, 6};
  base.delays.compute_jitter_max = SimTime::from_micros(800);
  base.delays.link_jitter_max = SimTime::from_micros(300);
  base.delays.straggler = {2, SimTime::from_ms(5.0), 6};
  base.seed = 12;
  std::size_t n = 0;
  for (const char* token : {"wagma", "allreduce", "local_sgd:tau=3", "dpsgd", "adpsgd"}) {
    auto cfg = harness::apply_mode_token(base, token);
    auto a = harness::execute_run(cfg, root / "a");
    auto b = harness::execute_run(cfg, root / "b");
    std::ifstream fa(a.metrics_path, std::ios::binary), fb(b.metrics_path, std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    const bool same = a.metrics_sha256 == b.metrics_sha256 &&
                      harness::sha256_hex(sa.str()) == harness::sha256_hex(sb.str()) &&
                      harness::sha256_hex(sa.str()) == a.metrics_sha256;
    ok = ok && same;
    ++n;
    if (!same) d << token << " differs; ";
  }
  std::filesystem::remove_all(root);
  d << n << " modes run twice, metrics.csv hashes " << (ok ? "identical" : "DIFFER");
  return {ok, d.str()};
}

Outcome a11_gradients() {
  std::vector<std::unique_ptr<problems::Problem>> probs;
  probs.push_back(problems::make_quadratic(64, 10.0, 1));
  probs.push_back(problems::make_logistic(512, 20, 1.0, 2));
  probs.push_back(problems::make_tiny_mlp({4, 16, 1}, 4));
  std::mt19937_64 rng(424242);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (const auto& p : probs) {
    for (int k = 0; k < 10; ++k) {
      Vec x = p->initial_point();
      for (auto& v : x) v += 0.5 * normal(rng);
      const auto rep = problems::finite_diff_check(*p, x, 1e-6, kFdTol);
      worst = std::max(worst, rep.max_relative_error);
      if (!rep.passed) {
        return {false, p->name() + " point " + std::to_string(k) +
                           fmt(" rel err %.3g", rep.max_relative_error)};
      }
    }
  }
  return {true, fmt("quadratic, logistic, mlp at 10 points each; worst rel err %.3g", worst)};
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    std::function<Outcome()> run;
    bool trains;
  };
  const std::vector<Criterion> criteria = {
      {"A1", "grouping examples", a1_grouping_examples, false},
      {"A2", "partition vs union-find", a2_partition, false},
      {"A3", "mixing", a3_mixing, false},
      {"A4", "collective exactly-once sums", a4_collective, false},
      {"A5", "staleness bound", a5_staleness, true},
      {"A6", "gamma potential", a6_gamma, true},
      {"A7", "convergence parity", a7_parity, true},
      {"A8", "straggler throughput", a8_throughput, true},
      {"A9", "mode reductions", a9_reductions, true},
      {"A10", "determinism", a10_determinism, true},
      {"A11", "gradient oracles", a11_gradients, false},
  };
  // Gradient oracles gate everything that trains.
  const Outcome gate = guarded(a11_gradients);
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    if (std::string(c.id) == "A11") {
      o = gate;
    } else if (c.trains && !gate.passed) {
      o = {false, "skipped: gradient oracles failed"};
    } else {
      o = guarded(c.run);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.passed;
    std::printf("%s %-4s %-30s %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
