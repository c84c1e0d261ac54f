#include <gtest/gtest.h>

#include <map>
#include <memory>
#include <random>

#include "wagma/collective.hpp"
#include "wagma/errors.hpp"
#include "wagma/scenario.hpp"

using namespace wagma;
using namespace wagma::collective;
using netsim::SimTime;

namespace {

Vec buf(Rank r, Iteration t) { return {static_cast<double>(100 * r + t), static_cast<double>(r)}; }

Vec add(const Vec& a, const Vec& b) {
  Vec c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

// P endpoints on one simulator; joins are scheduled as timers.
struct Cluster {
  struct Done {
    Completion completion;
    SimTime at;
    bool inline_result;
  };

  netsim::Simulator sim;
  SimTransport transport{sim};
  std::vector<std::unique_ptr<Endpoint>> eps;
  std::map<std::pair<Rank, Iteration>, Done> done;
  std::map<std::pair<Rank, Iteration>, JoinResult::Status> join_status;
  std::map<std::uint64_t, std::pair<Rank, Iteration>> pending;
  std::uint64_t next_tag = 0;

  static netsim::Simulator::Options options(std::uint32_t P) {
    netsim::Simulator::Options o;
    o.ranks = P;
    return o;
  }

  Cluster(std::uint32_t P, std::uint32_t S, RoundSchedule schedule, bool activation = true)
      : sim(options(P)) {
    for (Rank r = 0; r < P; ++r) {
      EndpointHooks hooks;
      hooks.on_complete = [this, r](const Completion& c) {
        done[{r, c.version}] = {c, sim.now(), false};
      };
      eps.push_back(std::make_unique<Endpoint>(
          r, EndpointConfig{P, S, activation, topology::MaskRule::kRotating, schedule},
          transport, std::move(hooks), buf(r, 1000)));
    }
    sim.set_handler([this](netsim::SimEvent& e) {
      if (e.kind == netsim::EventKind::kMessageArrival) {
        eps[e.target]->on_message(e.source, e.body);
        return;
      }
      const auto [r, v] = pending.at(e.tag);
      auto& ep = *eps[r];
      if (ep.state(v) == InstanceState::kInactive) ASSERT_TRUE(true);
      const auto res = ep.join_or_check(v, buf(r, v));
      join_status[{r, v}] = res.status;
      if (res.completion) done[{r, v}] = {*res.completion, sim.now(), true};
    });
  }

  void join_at(Rank r, Iteration v, double ms) {
    pending[next_tag] = {r, v};
    netsim::SimEvent e;
    e.time = SimTime::from_ms(ms);
    e.target = r;
    e.kind = netsim::EventKind::kTimer;
    e.tag = next_tag++;
    sim.schedule(std::move(e));
  }
};

// Records outgoing messages without delivering them.
struct RecordingTransport : Transport {
  std::vector<std::tuple<Rank, Rank, wire::Message>> sent;
  void send(Rank from, Rank to, std::vector<std::uint8_t> bytes) override {
    sent.emplace_back(from, to, wire::decode(bytes));
  }
};

}  // namespace

TEST(RoundSchedule, KindsFollowTau) {
  RoundSchedule s(20, 5, true);
  for (Iteration t = 0; t < 20; ++t) {
    EXPECT_EQ(s.kind(t), (t + 1) % 5 == 0 ? RoundKind::kSync : RoundKind::kGroup);
  }
  EXPECT_EQ(RoundSchedule(10, std::nullopt, false).kind(3), RoundKind::kLocal);
  EXPECT_EQ(RoundSchedule(10, 1, true).kind(3), RoundKind::kSync);
  EXPECT_THROW(RoundSchedule(10, 0, true), InvalidParams);
}

TEST(SendBuffer, StampsNeverDecrease) {
  SendBuffer b({1.0}, -1);
  b.install(std::vector<double>{2.0}, 3);
  EXPECT_EQ(b.stamped_iteration(), 3);
  EXPECT_EQ(b.payload(), Vec{2.0});
  EXPECT_THROW(b.install(std::vector<double>{3.0}, 2), ProtocolFault);
  EXPECT_THROW(b.install(std::vector<double>{3.0, 4.0}, 4), ProtocolFault);
}

TEST(Activation, FirstArrivalActivatesEveryoneWithPMinusOneMessages) {
  const std::uint32_t P = 8;
  Cluster c(P, 4, RoundSchedule(1, std::nullopt, true));
  c.join_at(1, 0, 0.0);
  for (Rank r = 0; r < P; ++r) {
    if (r != 1) c.join_at(r, 0, 50.0);
  }
  c.sim.run_until_idle();
  std::uint64_t total = 0;
  for (auto& ep : c.eps) total += ep->activation_messages_sent();
  EXPECT_EQ(total, P - 1);
  EXPECT_EQ(c.eps[1]->activation_messages_sent(), 3u);
  EXPECT_EQ(c.join_status.at({1, 0}), JoinResult::Status::kActive);
  for (Rank r = 0; r < P; ++r) {
    EXPECT_TRUE(c.eps[r]->was_activated(0));
    if (r != 1) {
      SCOPED_TRACE("rank " + std::to_string(r));
      // Late joiners find the round done and receive its stored sum.
      EXPECT_EQ(c.join_status.at({r, 0}), JoinResult::Status::kAlreadyDone);
      EXPECT_FALSE(c.done.at({r, 0}).completion.timely);
      EXPECT_EQ(c.done.at({r, 0}).completion.contributed_stamp, -1);
    }
  }
  // Rank 1's group at t=0 is {0,1,2,3}; only rank 1 was fresh.
  const Vec expect = add(add(add(buf(0, 1000), buf(1, 0)), buf(2, 1000)), buf(3, 1000));
  EXPECT_EQ(c.done.at({1, 0}).completion.sum, expect);
  EXPECT_TRUE(c.done.at({1, 0}).completion.timely);
}

TEST(Activation, StaleContributionMatchesFigureFour) {
  // P=4, S=2; rank 1 is slow in round 1 and contributes its round-0 model.
  Cluster c(4, 2, RoundSchedule(3, std::nullopt, true));
  for (Rank r = 0; r < 4; ++r) c.join_at(r, 0, 0.0);
  c.join_at(0, 1, 10.0);
  c.join_at(2, 1, 10.0);
  c.join_at(3, 1, 10.0);
  c.join_at(1, 1, 60.0);
  c.sim.run_until_idle();

  // Round 0 masks {1}: groups {0,1},{2,3}, all timely.
  EXPECT_EQ(c.done.at({0, 0}).completion.sum, add(buf(0, 0), buf(1, 0)));
  EXPECT_EQ(c.done.at({1, 0}).completion.sum, add(buf(0, 0), buf(1, 0)));
  EXPECT_EQ(c.done.at({2, 0}).completion.sum, add(buf(2, 0), buf(3, 0)));
  // Round 1 masks {2}: groups {0,2},{1,3}. Rank 1 is passive and stale.
  const auto& p1 = c.done.at({1, 1}).completion;
  EXPECT_EQ(c.join_status.at({1, 1}), JoinResult::Status::kAlreadyDone);
  EXPECT_FALSE(p1.timely);
  EXPECT_EQ(p1.contributed_stamp, 0);
  EXPECT_EQ(p1.sum, add(buf(1, 0), buf(3, 1)));
  EXPECT_EQ(c.done.at({3, 1}).completion.sum, add(buf(1, 0), buf(3, 1)));
  EXPECT_TRUE(c.done.at({3, 1}).completion.timely);
  // The fresh round-1 model of rank 1 stays in its buffer for later pulls.
  EXPECT_EQ(c.eps[1]->send_buffer().payload(), buf(1, 1));
  EXPECT_EQ(c.eps[1]->send_buffer().stamped_iteration(), 1);
}

TEST(Activation, ActivatorDoesNotWaitForStragglers) {
  const std::uint32_t P = 16;
  Cluster c(P, 4, RoundSchedule(1, std::nullopt, true));
  c.join_at(5, 0, 0.0);
  for (Rank r = 0; r < P; ++r) {
    if (r != 5) c.join_at(r, 0, 1000.0);
  }
  c.sim.run_until_idle();
  // Tree depth 4 plus 2 exchange phases at 1 ms per hop.
  EXPECT_LE(c.done.at({5, 0}).at, SimTime::from_ms(6.0));
  for (Rank r = 0; r < P; ++r) EXPECT_EQ(c.eps[r]->state(0), InstanceState::kComplete);
}

TEST(Activation, ConcurrentActivatorsExecuteOnce) {
  const std::uint32_t P = 8;
  Cluster c(P, 8, RoundSchedule(1, std::nullopt, true));
  for (Rank r = 0; r < P; ++r) c.join_at(r, 0, 0.0);
  c.sim.run_until_idle();
  Vec total{0.0, 0.0};
  for (Rank r = 0; r < P; ++r) total = add(total, buf(r, 0));
  std::uint64_t msgs = 0;
  for (Rank r = 0; r < P; ++r) {
    EXPECT_EQ(c.done.at({r, 0}).completion.sum, total);
    msgs += c.eps[r]->activation_messages_sent();
  }
  EXPECT_LE(msgs, P * (P - 1));
}

TEST(Activation, SingletonGroupsCompleteInline) {
  Cluster c(4, 1, RoundSchedule(2, std::nullopt, true));
  c.join_at(2, 0, 0.0);
  c.sim.run_until_idle();
  ASSERT_TRUE(c.done.at({2, 0}).inline_result);
  EXPECT_EQ(c.done.at({2, 0}).completion.sum, buf(2, 0));
}

TEST(Endpoint, VersionRegressionIsRejected) {
  Cluster c(2, 2, RoundSchedule(4, std::nullopt, true));
  c.join_at(0, 0, 0.0);
  c.join_at(1, 0, 0.0);
  c.join_at(0, 1, 10.0);
  c.join_at(1, 1, 10.0);
  c.sim.run_until_idle();
  EXPECT_THROW(c.eps[0]->join_or_check(0, buf(0, 0)), VersionRegression);
  EXPECT_THROW(c.eps[0]->join_or_check(1, buf(0, 1)), VersionRegression);
  // Joining ahead of an unfinished round is a fault as well.
  EXPECT_THROW(c.eps[1]->join_or_check(3, buf(1, 3)), ProtocolFault);
}

TEST(Endpoint, ProtocolFaultsAreSurfaced) {
  RecordingTransport tx;
  Endpoint ep(0, {4, 2, true, topology::MaskRule::kRotating, RoundSchedule(6, 3, true)}, tx, {},
              Vec{0.0});
  auto phase = [](wire::Kind k, Iteration v, std::uint16_t ph) {
    return wire::encode({k, v, ph, {1.0}});
  };
  // Round 2 is a sync round: a group phase message for it is a kind mismatch.
  EXPECT_THROW(ep.on_message(1, phase(wire::Kind::kPhase, 2, 0)), ProtocolFault);
  // Round 0 masks {1}: rank 2 is not rank 0's peer.
  EXPECT_THROW(ep.on_message(2, phase(wire::Kind::kPhase, 0, 0)), ProtocolFault);
  EXPECT_THROW(ep.on_message(1, phase(wire::Kind::kPhase, 0, 1)), ProtocolFault);
  // Beyond the schedule.
  EXPECT_THROW(ep.on_message(1, phase(wire::Kind::kPhase, 9, 0)), ProtocolFault);
  ep.on_message(1, phase(wire::Kind::kPhase, 0, 0));
  EXPECT_THROW(ep.on_message(1, phase(wire::Kind::kPhase, 0, 0)), ProtocolFault);
  // Activation off the binomial tree of root 3: rank 0 hears from 1, hop must be 1.
  EXPECT_THROW(ep.on_message(1, wire::encode(to_wire({0, 3, 0}))), ProtocolFault);
  // Truncated bytes.
  EXPECT_THROW(ep.on_message(1, std::vector<std::uint8_t>{2, 0}), ProtocolFault);
}

TEST(Endpoint, DuplicateAndLateActivationsAreDropped) {
  RecordingTransport tx;
  Endpoint ep(0, {4, 2, true, topology::MaskRule::kRotating, RoundSchedule(4, std::nullopt, true)},
              tx, {}, Vec{7.0});
  // Root 1 reaches rank 0 over bit 0; rank 0 is a leaf of that tree.
  ep.on_activation(1, {0, 1, 0});
  EXPECT_EQ(ep.state(0), InstanceState::kExchanging);
  const auto after_first = tx.sent.size();
  ep.on_activation(1, {0, 1, 0});
  EXPECT_EQ(tx.sent.size(), after_first);
  // Finish round 0 and check a late activation is ignored.
  ep.on_message(1, wire::encode({wire::Kind::kPhase, 0, 0, {1.0}}));
  EXPECT_EQ(ep.state(0), InstanceState::kComplete);
  const auto after_done = tx.sent.size();
  ep.on_activation(2, {0, 2, 1});
  EXPECT_EQ(tx.sent.size(), after_done);
  EXPECT_EQ(ep.state(0), InstanceState::kComplete);
}

TEST(Endpoint, ActivationForwardsAlongSubtree) {
  RecordingTransport tx;
  Endpoint ep(4, {8, 2, true, topology::MaskRule::kRotating, RoundSchedule(1, std::nullopt, true)},
              tx, {}, Vec{1.0});
  // Root 0 reaches rank 4 over bit 2; rank 4 has no higher bits to forward.
  ep.on_activation(0, {0, 0, 2});
  std::size_t acts = 0;
  for (auto& [from, to, m] : tx.sent) acts += m.kind == wire::Kind::kAct;
  EXPECT_EQ(acts, 0u);
  RecordingTransport tx2;
  Endpoint ep2(1, {8, 2, true, topology::MaskRule::kRotating, RoundSchedule(1, std::nullopt, true)},
               tx2, {}, Vec{1.0});
  // Root 0 reaches rank 1 over bit 0; it forwards to 3 and 5.
  ep2.on_activation(0, {0, 0, 0});
  std::vector<Rank> children;
  for (auto& [from, to, m] : tx2.sent) {
    if (m.kind == wire::Kind::kAct) children.push_back(to);
  }
  EXPECT_EQ(children, (std::vector<Rank>{3, 5}));
}

TEST(SyncAllreduce, Examples) {
  const std::vector<Vec> same(8, Vec{0.1, -2.5});
  const std::vector<Iteration> its(8, 4);
  for (const auto& r : sync_allreduce(same, its)) {
    // Pairwise doubling of equal buffers is exact scaling by P.
    EXPECT_EQ(r, (Vec{8 * 0.1, 8 * -2.5}));
  }
  const auto two = sync_allreduce(std::vector<Vec>{{1.0, 2.0}, {3.0, 5.0}},
                                  std::vector<Iteration>{0, 0});
  EXPECT_EQ(two[0], (Vec{4.0, 7.0}));
  EXPECT_EQ(two[1], (Vec{4.0, 7.0}));
  EXPECT_THROW(sync_allreduce(std::vector<Vec>{{1.0}, {2.0}}, std::vector<Iteration>{1, 2}),
               ProtocolFault);
}

TEST(SyncAllreduce, BitIdenticalAcrossRanksForArbitraryDoubles) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e3);
  for (std::uint32_t P : {2u, 4u, 16u, 32u}) {
    std::vector<Vec> bufs(P, Vec(5));
    for (auto& b : bufs)
      for (auto& x : b) x = n(rng);
    const auto out = sync_allreduce(bufs, std::vector<Iteration>(P, 7));
    for (const auto& r : out) EXPECT_EQ(r, out[0]);
    for (std::size_t k = 0; k < 5; ++k) {
      double exact = 0.0;
      double mag = 0.0;
      for (const auto& b : bufs) {
        exact += b[k];
        mag += std::abs(b[k]);
      }
      EXPECT_LE(std::abs(out[0][k] - exact), 1e-12 * mag);
    }
  }
}

TEST(Scenario, RandomisedExactlyOnceAndSums) {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 150; ++i) {
    ScenarioConfig cfg;
    cfg.P = std::vector<std::uint32_t>{4, 8, 16}[i % 3];
    cfg.S = 1u << (1 + rng() % topology::log2_exact(cfg.P));
    cfg.rounds = 6 + rng() % 10;
    cfg.tau = (i % 2) ? std::optional<Iteration>(2 + rng() % 6) : std::nullopt;
    cfg.integer_payloads = i % 4 != 0;
    cfg.delays.compute_jitter_max = SimTime::from_micros(rng() % 4000);
    cfg.delays.link_jitter_max = SimTime::from_micros(rng() % 800);
    cfg.delays.straggler = {1, SimTime::from_micros(rng() % 6000), rng()};
    cfg.seed = rng();
    const auto rep = run_collective_scenario(cfg);
    ASSERT_TRUE(rep.ok()) << "scenario " << i << ": "
                          << (rep.faults.empty() ? "sum mismatch" : rep.faults.front());
    EXPECT_GT(rep.instances_completed, 0u);
    EXPECT_LE(rep.max_activations_per_tree, cfg.P - 1);
    if (cfg.integer_payloads) EXPECT_EQ(rep.max_relative_error, 0.0);
    if (cfg.tau) EXPECT_LE(rep.max_staleness, static_cast<std::int64_t>(*cfg.tau) - 1);
  }
}

TEST(Scenario, StragglersProduceStaleButCorrectRounds) {
  ScenarioConfig cfg;
  cfg.P = 8;
  cfg.S = 4;
  cfg.rounds = 30;
  cfg.delays.straggler = {2, SimTime::from_ms(20.0), 5};
  const auto rep = run_collective_scenario(cfg);
  EXPECT_TRUE(rep.ok());
  EXPECT_GT(rep.stale_instances, 0u);
  EXPECT_GT(rep.timely_instances, 0u);
}

TEST(Scenario, BlockingGroupModeNeedsNoActivation) {
  ScenarioConfig cfg;
  cfg.P = 8;
  cfg.S = 4;
  cfg.rounds = 12;
  cfg.activation = false;
  cfg.delays.compute_jitter_max = SimTime::from_ms(3.0);
  const auto rep = run_collective_scenario(cfg);
  EXPECT_TRUE(rep.ok());
  EXPECT_EQ(rep.activation_messages, 0u);
  EXPECT_EQ(rep.stale_instances, 0u);
}

TEST(Scenario, CorruptionIsDetected) {
  ScenarioConfig cfg;
  cfg.P = 4;
  cfg.S = 2;
  cfg.rounds = 4;
  cfg.corrupt_one_phase_payload = true;
  const auto rep = run_collective_scenario(cfg);
  EXPECT_FALSE(rep.ok());
  EXPECT_GT(rep.sum_mismatches, 0u);
}
