#include "wagma/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "wagma/collective.hpp"
#include "wagma/errors.hpp"
#include "wagma/wire.hpp"

namespace wagma::collective {

namespace {

Vec fresh_buffer(const ScenarioConfig& cfg, Rank rank, std::int64_t stamp) {
  Vec v(cfg.dimension);
  std::mt19937_64 rng(netsim::mix_seed(cfg.seed, rank, static_cast<std::uint64_t>(stamp + 1)));
  if (cfg.integer_payloads) {
    std::uniform_int_distribution<int> dist(-1000, 1000);
    for (auto& x : v) x = dist(rng);
  } else {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& x : v) x = dist(rng) * std::pow(10.0, dist(rng) * 3);
  }
  return v;
}

}  // namespace

ScenarioReport run_collective_scenario(const ScenarioConfig& cfg) {
  topology::validate({cfg.P, cfg.S, 0});
  cfg.delays.validate(cfg.P);
  ScenarioReport report;

  netsim::Simulator sim({.ranks = cfg.P,
                         .link_latency = cfg.delays.link_latency,
                         .link_jitter_max = cfg.delays.link_jitter_max,
                         .seed = cfg.seed});
  SimTransport transport(sim);
  const RoundSchedule schedule(cfg.rounds, cfg.tau, true);

  // (rank, version) -> contributed stamp
  std::map<std::pair<Rank, Iteration>, std::int64_t> contributed;
  std::map<std::pair<Rank, Iteration>, int> executions;
  std::vector<Iteration> current(cfg.P, 0);
  std::vector<Endpoint> endpoints;
  endpoints.reserve(cfg.P);

  struct Finished {
    Rank rank;
    Completion completion;
  };
  std::vector<Finished> finished;
  bool corrupted = false;

  auto start_compute = [&](Rank r, Iteration t) {
    if (t >= cfg.rounds) return;
    sim.schedule_after(netsim::compute_delay(r, t, cfg.delays, cfg.P, cfg.seed), r,
                       netsim::EventKind::kComputeDone, t);
  };
  auto on_done = [&](Rank r, const Completion& c) {
    finished.push_back({r, c});
    current[r] = c.version + 1;
    start_compute(r, c.version + 1);
  };

  for (Rank r = 0; r < cfg.P; ++r) {
    EndpointHooks hooks;
    hooks.on_complete = [&, r](const Completion& c) { on_done(r, c); };
    hooks.on_exchange_start = [&, r](Iteration v, RoundKind, std::int64_t stamp,
                                     std::span<const double>) {
      contributed[{r, v}] = stamp;
      if (++executions[{r, v}] > 1) ++report.duplicate_executions;
    };
    if (cfg.corrupt_one_phase_payload && r == 0) {
      hooks.mutate_outgoing = [&](Iteration, std::uint16_t, Vec& payload) {
        if (corrupted || payload.empty()) return;
        corrupted = true;
        std::uint64_t bits;
        std::memcpy(&bits, &payload[0], sizeof bits);
        bits ^= std::uint64_t{1} << 52;
        std::memcpy(&payload[0], &bits, sizeof bits);
      };
    }
    endpoints.emplace_back(r, EndpointConfig{cfg.P, cfg.S, cfg.activation,
                                             topology::MaskRule::kRotating, schedule},
                           transport, std::move(hooks), fresh_buffer(cfg, r, -1));
  }

  // Activation accounting per (version, root).
  std::map<std::pair<Iteration, Rank>, std::uint64_t> per_tree;

  sim.set_handler([&](netsim::SimEvent& ev) {
    const Rank r = ev.target;
    if (ev.kind == netsim::EventKind::kMessageArrival) {
      const wire::Message msg = wire::decode(ev.body);
      if (msg.kind == wire::Kind::kAct) {
        const auto act = activation_from_wire(msg);
        ++per_tree[{act.version, act.root}];
      }
      endpoints[r].on_message(ev.source, ev.body);
      return;
    }
    const Iteration t = ev.tag;
    const Vec fresh = fresh_buffer(cfg, r, static_cast<std::int64_t>(t));
    if (schedule.kind(t) == RoundKind::kSync) {
      if (auto c = endpoints[r].join_sync(t, fresh)) on_done(r, *c);
      return;
    }
    if (cfg.activation && !endpoints[r].was_activated(t) &&
        endpoints[r].state(t) == InstanceState::kInactive) {
      ++report.activator_joins;
    }
    JoinResult jr = endpoints[r].join_or_check(t, fresh);
    if (jr.completion) on_done(r, *jr.completion);
  });

  for (Rank r = 0; r < cfg.P; ++r) start_compute(r, 0);

  try {
    sim.run_until_idle();
  } catch (const Error& e) {
    report.faults.emplace_back(e.what());
    return report;
  }

  for (Rank r = 0; r < cfg.P; ++r) {
    if (current[r] != cfg.rounds) {
      report.faults.push_back("rank " + std::to_string(r) + " stalled at iteration " +
                              std::to_string(current[r]));
    }
    report.activation_messages += endpoints[r].activation_messages_sent();
  }
  for (const auto& [key, count] : per_tree) {
    report.max_activations_per_tree = std::max(report.max_activations_per_tree, count);
  }

  // Group members' contributions for versions completed by join (actively or
  // passively) are all recorded in `contributed`.
  for (const auto& [r, c] : finished) {
    ++report.instances_completed;
    c.timely ? ++report.timely_instances : ++report.stale_instances;
    std::vector<Rank> members;
    if (c.kind == RoundKind::kSync) {
      for (Rank m = 0; m < cfg.P; ++m) members.push_back(m);
    } else {
      members = topology::group_members(
          r, topology::phase_masks({cfg.P, cfg.S, c.version}), cfg.P);
    }
    Vec expected(cfg.dimension, 0.0);
    std::vector<long double> exact(cfg.dimension, 0.0L);
    for (Rank m : members) {
      auto it = contributed.find({m, c.version});
      if (it == contributed.end()) {
        report.faults.push_back("missing contribution");
        continue;
      }
      if (c.kind == RoundKind::kGroup) {
        report.max_staleness = std::max(
            report.max_staleness, static_cast<std::int64_t>(c.version) - it->second);
      }
      const Vec buf = fresh_buffer(cfg, m, it->second);
      for (std::size_t k = 0; k < buf.size(); ++k) exact[k] += buf[k];
    }
    bool mismatch = false;
    for (std::size_t k = 0; k < cfg.dimension; ++k) {
      const long double diff = std::fabs(static_cast<long double>(c.sum[k]) - exact[k]);
      if (cfg.integer_payloads) {
        mismatch |= diff != 0.0L;
      } else {
        long double scale = 0.0L;
        for (Rank m : members) {
          scale += std::fabs(fresh_buffer(cfg, m, contributed[{m, c.version}])[k]);
        }
        const double rel = scale > 0 ? static_cast<double>(diff / scale) : 0.0;
        report.max_relative_error = std::max(report.max_relative_error, rel);
        mismatch |= rel > 1e-12;
      }
    }
    if (mismatch) ++report.sum_mismatches;
  }
  return report;
}

}  // namespace wagma::collective
