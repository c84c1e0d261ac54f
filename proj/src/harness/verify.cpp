#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "wagma/errors.hpp"
#include "wagma/harness.hpp"
#include "wagma/scenario.hpp"
#include "wagma/topology.hpp"

namespace wagma::harness {

namespace {

using topology::GroupingParams;
using topology::MaskRule;

std::string format_groups(const std::vector<std::vector<Rank>>& groups) {
  std::ostringstream out;
  out << '{';
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out << (g ? ",{" : "{");
    for (std::size_t i = 0; i < groups[g].size(); ++i) out << (i ? "," : "") << groups[g][i];
    out << '}';
  }
  out << '}';
  return out.str();
}

// Components of the graph joining p and p ^ m for every in-range mask.
std::vector<std::vector<Rank>> union_find_groups(std::uint32_t P,
                                                 const std::vector<std::uint32_t>& masks) {
  std::vector<Rank> parent(P);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](Rank x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (auto m : masks) {
    if (m >= P) continue;
    for (Rank p = 0; p < P; ++p) {
      const Rank a = find(p), b = find(p ^ m);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<std::vector<Rank>> by_root(P);
  for (Rank p = 0; p < P; ++p) by_root[find(p)].push_back(p);
  std::vector<std::vector<Rank>> groups;
  for (auto& g : by_root) {
    if (!g.empty()) groups.push_back(std::move(g));
  }
  return groups;
}

PropertyResult check_examples(MaskRule rule) {
  PropertyResult res{"grouping_examples", true, ""};
  const std::vector<std::vector<std::vector<Rank>>> expected = {
      {{0, 1, 2, 3}, {4, 5, 6, 7}},
      {{0, 1, 4, 5}, {2, 3, 6, 7}},
  };
  for (Iteration t = 0; t < 2; ++t) {
    const auto got = topology::compute_groups({8, 4, t}, rule).groups;
    if (got != expected[t]) {
      res.passed = false;
      res.detail += "t=" + std::to_string(t) + ": got " + format_groups(got) + ", expected " +
                    format_groups(expected[t]) + ". ";
    }
  }
  if (!res.passed && rule == MaskRule::kLiteral) {
    res.detail += "interpretation divergence: the literal mask-shift rule does not reproduce "
                  "the worked P=8, S=4 example.";
  }
  if (res.passed) res.detail = "P=8 S=4 t=0,1 match";
  return res;
}

PropertyResult check_partitions(MaskRule rule) {
  PropertyResult res{"partition_union_find", true, ""};
  std::uint64_t checked = 0;
  for (std::uint32_t P = 1; P <= 1024; P <<= 1) {
    const std::uint32_t L = topology::log2_exact(P);
    for (std::uint32_t S = 1; S <= P; S <<= 1) {
      for (Iteration t = 0; t < std::max<Iteration>(1, 4 * L); ++t) {
        const GroupingParams params{P, S, t};
        const auto part = topology::compute_groups(params, rule);
        const auto oracle = union_find_groups(P, topology::phase_masks(params, rule).masks);
        ++checked;
        bool ok = part.groups == oracle && part.groups.size() == P / S;
        for (const auto& g : part.groups) ok = ok && g.size() == S;
        if (!ok) {
          res.passed = false;
          res.detail = "P=" + std::to_string(P) + " S=" + std::to_string(S) +
                       " t=" + std::to_string(t) + ": groups " +
                       std::to_string(part.groups.size()) + " vs expected " +
                       std::to_string(P / S);
          return res;
        }
      }
    }
  }
  res.detail = std::to_string(checked) + " (P,S,t) cases";
  return res;
}

PropertyResult check_mixing(MaskRule rule) {
  PropertyResult res{"mixing", true, ""};
  std::uint64_t checked = 0;
  for (std::uint32_t P = 2; P <= 1024; P <<= 1) {
    const std::uint32_t L = topology::log2_exact(P);
    for (std::uint32_t S = 2; S <= P; S <<= 1) {
      const std::uint32_t ls = topology::log2_exact(S);
      for (Iteration t = 0; t < 4 * L; ++t) {
        const GroupingParams params{P, S, 0};
        ++checked;
        if (!topology::mixing_reachable(params, t, L, rule)) {
          res.passed = false;
          res.detail = "P=" + std::to_string(P) + " S=" + std::to_string(S) + " from t=" +
                       std::to_string(t) + " not mixed after log2 P iterations";
          return res;
        }
        if (L % ls == 0) {
          const std::uint64_t k = L / ls;
          const bool exact = topology::mixing_reachable(params, t, k, rule) &&
                             (k == 1 || !topology::mixing_reachable(params, t, k - 1, rule));
          if (!exact) {
            res.passed = false;
            res.detail = "P=" + std::to_string(P) + " S=" + std::to_string(S) + " from t=" +
                         std::to_string(t) + " not mixed in exactly " + std::to_string(k) +
                         " iterations";
            return res;
          }
        }
      }
    }
  }
  res.detail = std::to_string(checked) + " cases";
  return res;
}

collective::ScenarioConfig random_scenario(std::mt19937_64& rng, bool corrupt) {
  collective::ScenarioConfig c;
  const std::uint32_t Ps[] = {4, 8, 16};
  c.P = Ps[rng() % 3];
  const std::uint32_t L = topology::log2_exact(c.P);
  c.S = 1u << (1 + rng() % L);
  c.rounds = 4 + rng() % 12;
  if (rng() % 3 != 0) c.tau = 2 + rng() % 8;
  c.activation = rng() % 5 != 0;
  c.integer_payloads = rng() % 2 == 0;
  c.dimension = 1 + rng() % 4;
  c.delays.base_compute = netsim::SimTime::from_micros(200 + rng() % 2000);
  c.delays.compute_jitter_max = netsim::SimTime::from_micros(rng() % 3000);
  c.delays.link_latency = netsim::SimTime::from_micros(50 + rng() % 1500);
  c.delays.link_jitter_max = netsim::SimTime::from_micros(rng() % 1000);
  if (rng() % 2 == 0) {
    c.delays.straggler.victims_per_iteration = 1 + rng() % 2;
    c.delays.straggler.extra_delay = netsim::SimTime::from_micros(rng() % 8000);
    c.delays.straggler.selection_seed = rng();
  }
  c.seed = rng();
  c.corrupt_one_phase_payload = corrupt;
  return c;
}

PropertyResult check_collective(const VerifyOptions& options) {
  PropertyResult res{"collective_exactly_once_sums", true, ""};
  std::mt19937_64 rng(options.seed);
  std::uint64_t instances = 0, mismatches = 0, duplicates = 0, faults = 0;
  std::string first;
  for (std::uint32_t i = 0; i < options.scenarios; ++i) {
    const auto cfg = random_scenario(rng, options.corrupt_phase);
    collective::ScenarioReport rep;
    try {
      rep = collective::run_collective_scenario(cfg);
    } catch (const Error& e) {
      rep.faults.emplace_back(e.what());
    }
    instances += rep.instances_completed;
    mismatches += rep.sum_mismatches;
    duplicates += rep.duplicate_executions;
    faults += rep.faults.size();
    if (!rep.ok() && first.empty()) {
      first = "scenario " + std::to_string(i) + " (P=" + std::to_string(cfg.P) +
              " S=" + std::to_string(cfg.S) + "): " +
              (rep.faults.empty() ? "sum mismatch" : rep.faults.front());
    }
  }
  res.passed = mismatches == 0 && duplicates == 0 && faults == 0;
  res.detail = std::to_string(options.scenarios) + " scenarios, " + std::to_string(instances) +
               " instances, " + std::to_string(mismatches) + " sum mismatches, " +
               std::to_string(duplicates) + " duplicate executions, " + std::to_string(faults) +
               " faults";
  if (!first.empty()) res.detail += "; first failure: " + first;
  return res;
}

PropertyResult check_gradients() {
  PropertyResult res{"finite_difference_gradients", true, ""};
  std::vector<std::unique_ptr<problems::Problem>> probs;
  probs.push_back(problems::make_problem(problems::QuadraticSpec{16, 10.0, 128, 1.0, 3}));
  probs.push_back(problems::make_problem(problems::LogisticSpec{256, 8, 1.0, 1e-4, 3}));
  probs.push_back(problems::make_problem(problems::MlpSpec{{4, 8, 1}, 64, 3}));
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (const auto& p : probs) {
    for (int k = 0; k < 10; ++k) {
      Vec x = p->initial_point();
      for (auto& v : x) v += 0.5 * normal(rng);
      const auto rep = problems::finite_diff_check(*p, x, 1e-6, 1e-5);
      worst = std::max(worst, rep.max_relative_error);
      if (!rep.passed) {
        res.passed = false;
        res.detail = p->name() + " point " + std::to_string(k) + ": relative error " +
                     std::to_string(rep.max_relative_error);
        return res;
      }
    }
  }
  std::ostringstream d;
  d << "3 problems x 10 points, worst relative error " << worst;
  res.detail = d.str();
  return res;
}

PropertyResult check_staleness() {
  PropertyResult res{"staleness_bound", true, ""};
  const auto problem = problems::make_problem(problems::QuadraticSpec{16, 10.0, 256, 1.0, 5});
  std::ostringstream d;
  for (Iteration tau : {2, 8, 10}) {
    optim::OptimizerConfig c;
    c.P = 16;
    c.S = 4;
    c.tau = tau;
    c.T = 60;
    c.eta.value = 0.02;
    netsim::DelayModel delays;
    delays.compute_jitter_max = netsim::SimTime::from_micros(800);
    delays.straggler = {2, netsim::SimTime::from_ms(12.0), 9};
    try {
      const auto r = training::run_training(c, *problem, delays, 17);
      d << "tau=" << tau << " max staleness " << r.max_staleness << "; ";
      if (r.max_staleness > static_cast<std::int64_t>(tau) - 1) res.passed = false;
    } catch (const Error& e) {
      res.passed = false;
      d << "tau=" << tau << ": " << e.what() << "; ";
    }
  }
  res.detail = d.str();
  return res;
}

PropertyResult check_determinism() {
  PropertyResult res{"determinism", true, ""};
  RunConfig c;
  c.optimizer.P = 8;
  c.optimizer.S = 2;
  c.optimizer.T = 40;
  c.optimizer.eta.value = 0.02;
  c.problem = problems::QuadraticSpec{16, 10.0, 128, 1.0, 1};
  c.delays.compute_jitter_max = netsim::SimTime::from_micros(700);
  c.delays.link_jitter_max = netsim::SimTime::from_micros(300);
  c.delays.straggler = {1, netsim::SimTime::from_ms(3.0), 4};
  c.seed = 99;
  const auto problem = problems::make_problem(c.problem);
  const auto a = training::run_training(c.optimizer, *problem, c.delays, c.seed);
  const auto b = training::run_training(c.optimizer, *problem, c.delays, c.seed);
  const auto ha = sha256_hex(metrics_csv(a.rows));
  const auto hb = sha256_hex(metrics_csv(b.rows));
  res.passed = ha == hb;
  res.detail = "metrics sha256 " + ha.substr(0, 16) + (res.passed ? " == " : " != ") +
               hb.substr(0, 16);
  return res;
}

}  // namespace

std::vector<PropertyResult> run_verify(const VerifyOptions& options, std::ostream* progress) {
  const MaskRule rule = options.literal_masks ? MaskRule::kLiteral : MaskRule::kRotating;
  std::vector<PropertyResult> results;
  auto record = [&](PropertyResult r) {
    if (progress) {
      *progress << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << std::endl;
    }
    results.push_back(std::move(r));
  };
  // Gradient oracles gate everything that trains.
  record(check_gradients());
  record(check_examples(rule));
  record(check_partitions(rule));
  record(check_mixing(rule));
  record(check_collective(options));
  record(check_staleness());
  record(check_determinism());
  return results;
}

}  // namespace wagma::harness
