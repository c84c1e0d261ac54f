#include <algorithm>
#include <string>

#include "wagma/collective.hpp"
#include "wagma/errors.hpp"

namespace wagma::collective {

namespace {

std::string describe(Rank rank, Iteration version) {
  return "rank " + std::to_string(rank) + " version " + std::to_string(version);
}

std::uint32_t highest_bit(std::uint32_t x) {
  return 31u - static_cast<std::uint32_t>(std::countl_zero(x));
}

}  // namespace

RoundSchedule::RoundSchedule(Iteration total, std::optional<Iteration> tau,
                             bool group_rounds)
    : total_(total), tau_(tau), group_rounds_(group_rounds) {
  if (tau_ && *tau_ == 0) {
    throw InvalidParams("round schedule: tau must be >= 1");
  }
}

RoundKind RoundSchedule::kind(Iteration t) const {
  if (tau_ && (t + 1) % *tau_ == 0) {
    return RoundKind::kSync;
  }
  return group_rounds_ ? RoundKind::kGroup : RoundKind::kLocal;
}

wire::Message to_wire(const ActivationMessage& msg) {
  return {wire::Kind::kAct, msg.version, msg.hop,
          {static_cast<double>(msg.root)}};
}

ActivationMessage activation_from_wire(const wire::Message& msg) {
  if (msg.kind != wire::Kind::kAct || msg.payload.size() != 1) {
    throw ProtocolFault("malformed activation message");
  }
  return {msg.version, static_cast<Rank>(msg.payload[0]), msg.phase};
}

void SendBuffer::install(std::span<const double> fresh, std::int64_t stamp) {
  if (stamp < stamp_) {
    throw ProtocolFault("send buffer stamp regressed from " +
                        std::to_string(stamp_) + " to " + std::to_string(stamp));
  }
  if (!payload_.empty() && fresh.size() != payload_.size()) {
    throw ProtocolFault("send buffer dimension changed");
  }
  payload_.assign(fresh.begin(), fresh.end());
  stamp_ = stamp;
}

Endpoint::Endpoint(Rank rank, EndpointConfig config, Transport& transport,
                   EndpointHooks hooks, Vec initial_buffer)
    : rank_(rank),
      config_(std::move(config)),
      global_phases_(0),
      transport_(&transport),
      hooks_(std::move(hooks)),
      send_buffer_(std::move(initial_buffer), -1) {
  topology::validate({config_.P, config_.S, 0});
  if (rank_ >= config_.P) {
    throw InvalidParams("endpoint rank out of range");
  }
  global_phases_ = topology::log2_exact(config_.P);
  advance_next_version(0);
}

void Endpoint::advance_next_version(Iteration from) {
  next_version_ = from;
  const auto& sched = config_.schedule;
  while (next_version_ < sched.total() &&
         sched.kind(next_version_) == RoundKind::kLocal) {
    ++next_version_;
  }
}

std::vector<std::uint32_t> Endpoint::masks_for(Iteration version,
                                               RoundKind kind) const {
  if (kind == RoundKind::kSync) {
    std::vector<std::uint32_t> masks(global_phases_);
    for (std::uint32_t r = 0; r < global_phases_; ++r) {
      masks[r] = 1u << r;
    }
    return masks;
  }
  auto masks =
      topology::phase_masks({config_.P, config_.S, version}, config_.mask_rule)
          .masks;
  // The literal shift rule can yield masks past the last rank; those
  // phases have no partner.
  std::erase_if(masks, [&](std::uint32_t m) { return m >= config_.P; });
  return masks;
}

InstanceState Endpoint::state(Iteration version) const {
  if (last_completed_ && version <= *last_completed_) {
    return InstanceState::kComplete;
  }
  if (running_ && running_->version == version) {
    return InstanceState::kExchanging;
  }
  if (activation_cover_.contains(version)) {
    return InstanceState::kActivated;
  }
  return InstanceState::kInactive;
}

bool Endpoint::was_activated(Iteration version) const {
  return activated_history_.contains(version);
}

JoinResult Endpoint::join_or_check(Iteration version,
                                   std::span<const double> fresh) {
  if (config_.schedule.kind(version) != RoundKind::kGroup) {
    throw ProtocolFault("join_or_check on a non-group round: " +
                        describe(rank_, version));
  }
  if (last_joined_ && version <= *last_joined_) {
    throw VersionRegression("join of " + describe(rank_, version) +
                            " after joining version " +
                            std::to_string(*last_joined_));
  }
  if (waiting_join_) {
    throw ProtocolFault("join of " + describe(rank_, version) +
                        " while version " + std::to_string(*waiting_join_) +
                        " is outstanding");
  }
  last_joined_ = version;
  send_buffer_.install(fresh, static_cast<std::int64_t>(version));

  JoinResult result;
  if (last_completed_ && version <= *last_completed_) {
    auto it = passive_results_.find(version);
    if (it == passive_results_.end()) {
      throw ProtocolFault("no stored result for completed " +
                          describe(rank_, version));
    }
    result.status = JoinResult::Status::kAlreadyDone;
    result.completion = std::move(it->second);
    passive_results_.erase(it);
    return result;
  }

  waiting_join_ = version;
  if (running_ && running_->version == version) {
    // Started passively with an older buffer; completes later.
    return result;
  }
  if (running_ || version != next_version_) {
    throw ProtocolFault("join of " + describe(rank_, version) +
                        " before earlier rounds completed");
  }

  in_join_ = true;
  if (config_.activation && !activation_cover_.contains(version)) {
    // First to arrive: activate everyone along our own binomial tree.
    activation_cover_[version] = global_phases_;
    activated_history_.insert(version);
    forward_activation(version, rank_, 0, global_phases_);
    activation_cover_[version] = 0;
  }
  start(version);
  pump();
  in_join_ = false;
  result.completion = std::exchange(inline_completion_, std::nullopt);
  return result;
}

std::optional<Completion> Endpoint::join_sync(Iteration version,
                                              std::span<const double> fresh) {
  if (config_.schedule.kind(version) != RoundKind::kSync) {
    throw ProtocolFault("join_sync on a non-sync round: " +
                        describe(rank_, version));
  }
  if (last_joined_ && version <= *last_joined_) {
    throw VersionRegression("sync join of " + describe(rank_, version) +
                            " after joining version " +
                            std::to_string(*last_joined_));
  }
  if (waiting_join_ || running_ || version != next_version_) {
    throw ProtocolFault("sync round entered out of order: " +
                        describe(rank_, version));
  }
  last_joined_ = version;
  send_buffer_.install(fresh, static_cast<std::int64_t>(version));
  waiting_join_ = version;
  in_join_ = true;
  start(version);
  pump();
  in_join_ = false;
  return std::exchange(inline_completion_, std::nullopt);
}

void Endpoint::forward_activation(Iteration version, Rank root,
                                  std::uint32_t from_bit, std::uint32_t to_bit) {
  for (std::uint32_t bit = from_bit; bit < to_bit; ++bit) {
    const Rank child = rank_ ^ (1u << bit);
    transport_->send(rank_, child,
                     wire::encode(to_wire({version, root,
                                           static_cast<std::uint16_t>(bit)})));
    ++activations_sent_;
  }
}

void Endpoint::on_message(Rank from, std::span<const std::uint8_t> bytes) {
  wire::Message msg = wire::decode(bytes);
  if (msg.kind == wire::Kind::kAct) {
    on_activation(from, activation_from_wire(msg));
  } else {
    on_phase(from, std::move(msg));
  }
}

void Endpoint::on_activation(Rank from, const ActivationMessage& msg) {
  const Iteration v = msg.version;
  if (!config_.activation) {
    throw ProtocolFault("activation received in synchronous group mode at " +
                        describe(rank_, v));
  }
  if (v >= config_.schedule.total() ||
      config_.schedule.kind(v) != RoundKind::kGroup) {
    throw ProtocolFault("activation for a non-group round at " +
                        describe(rank_, v));
  }
  const Rank rel = rank_ ^ msg.root;
  if (msg.root >= config_.P || rel == 0 || msg.hop != highest_bit(rel) ||
      from != (rank_ ^ (1u << msg.hop))) {
    throw ProtocolFault("activation off the binomial tree of root " +
                        std::to_string(msg.root) + " at " + describe(rank_, v));
  }
  if (last_completed_ && v <= *last_completed_) {
    return;
  }
  auto [it, inserted] = activation_cover_.try_emplace(v, global_phases_);
  activated_history_.insert(v);
  const std::uint32_t first_child_bit = msg.hop + 1u;
  if (first_child_bit < it->second) {
    const std::uint32_t already = it->second;
    it->second = first_child_bit;
    forward_activation(v, msg.root, first_child_bit, already);
  }
  // Leaves forward nothing but still start their passive exchange.
  if (inserted) {
    pump();
  }
}

void Endpoint::on_phase(Rank from, wire::Message msg) {
  const Iteration v = msg.version;
  const RoundKind expected =
      msg.kind == wire::Kind::kSync ? RoundKind::kSync : RoundKind::kGroup;
  if (v >= config_.schedule.total() || config_.schedule.kind(v) != expected) {
    throw ProtocolFault("phase message of mismatched round kind at " +
                        describe(rank_, v));
  }
  if ((last_completed_ && v <= *last_completed_) ||
      (running_ && v < running_->version)) {
    throw ProtocolFault("phase message for finished " + describe(rank_, v));
  }
  const auto masks = masks_for(v, expected);
  if (msg.phase >= masks.size()) {
    throw ProtocolFault("phase index " + std::to_string(msg.phase) +
                        " out of range at " + describe(rank_, v));
  }
  if (from != (rank_ ^ masks[msg.phase])) {
    throw ProtocolFault("phase " + std::to_string(msg.phase) + " message from " +
                        std::to_string(from) + ", expected peer " +
                        std::to_string(rank_ ^ masks[msg.phase]) + " at " +
                        describe(rank_, v));
  }
  const bool fresh_key =
      inbox_.emplace(std::make_pair(v, msg.phase), std::move(msg.payload)).second;
  if (!fresh_key) {
    throw ProtocolFault("duplicate phase message at " + describe(rank_, v));
  }
  pump();
}

void Endpoint::start(Iteration version) {
  Running run;
  run.version = version;
  run.kind = config_.schedule.kind(version);
  run.masks = masks_for(version, run.kind);
  run.acc = send_buffer_.payload();
  run.stamp = send_buffer_.stamped_iteration();
  if (hooks_.on_exchange_start) {
    hooks_.on_exchange_start(version, run.kind, run.stamp, run.acc);
  }
  running_ = std::move(run);
}

void Endpoint::pump() {
  for (;;) {
    if (!running_) {
      const Iteration v = next_version_;
      if (v >= config_.schedule.total()) {
        return;
      }
      const bool joined = waiting_join_ && *waiting_join_ == v;
      const bool activated =
          config_.schedule.kind(v) == RoundKind::kGroup && config_.activation &&
          activation_cover_.contains(v);
      if (!joined && !activated) {
        return;
      }
      start(v);
    }

    Running& run = *running_;
    while (run.phase < run.masks.size()) {
      const auto phase = static_cast<std::uint16_t>(run.phase);
      const Rank partner = rank_ ^ run.masks[run.phase];
      if (!run.sent_current) {
        wire::Message out{run.kind == RoundKind::kSync ? wire::Kind::kSync
                                                        : wire::Kind::kPhase,
                          run.version, phase, run.acc};
        if (hooks_.mutate_outgoing) {
          hooks_.mutate_outgoing(run.version, phase, out.payload);
        }
        transport_->send(rank_, partner, wire::encode(out));
        run.sent_current = true;
      }
      auto it = inbox_.find({run.version, phase});
      if (it == inbox_.end()) {
        return;
      }
      const Vec& incoming = it->second;
      if (incoming.size() != run.acc.size()) {
        throw ProtocolFault("phase payload dimension mismatch at " +
                            describe(rank_, run.version));
      }
      // Fixed order: received, then local.
      for (std::size_t k = 0; k < run.acc.size(); ++k) {
        run.acc[k] = incoming[k] + run.acc[k];
      }
      inbox_.erase(it);
      ++run.phase;
      run.sent_current = false;
    }
    finish();
  }
}

void Endpoint::finish() {
  Running run = std::move(*running_);
  running_.reset();

  Completion done;
  done.version = run.version;
  done.kind = run.kind;
  done.sum = std::move(run.acc);
  done.contributed_stamp = run.stamp;
  done.timely = run.stamp == static_cast<std::int64_t>(run.version);

  last_completed_ = run.version;
  activation_cover_.erase(activation_cover_.begin(),
                          activation_cover_.upper_bound(run.version));
  advance_next_version(run.version + 1);

  if (waiting_join_ && *waiting_join_ == run.version) {
    waiting_join_.reset();
    if (in_join_) {
      inline_completion_ = std::move(done);
    } else if (hooks_.on_complete) {
      hooks_.on_complete(done);
    }
  } else {
    passive_results_.emplace(run.version, std::move(done));
  }
}

std::vector<Vec> sync_allreduce(std::span<const Vec> buffers,
                                std::span<const Iteration> iterations) {
  const auto P = static_cast<std::uint32_t>(buffers.size());
  if (iterations.size() != buffers.size()) {
    throw InvalidParams("sync_allreduce: one iteration index per buffer");
  }
  if (P == 0) {
    return {};
  }
  for (Iteration t : iterations) {
    if (t != iterations[0]) {
      throw ProtocolFault("sync_allreduce: ranks at different iterations");
    }
  }
  const Iteration t = iterations[0];

  netsim::Simulator::Options opts;
  opts.ranks = P;
  netsim::Simulator sim(opts);
  SimTransport transport(sim);
  // A schedule in which round t is a sync round.
  const RoundSchedule schedule(t + 1, t + 1, false);

  std::vector<Vec> results(P);
  std::vector<Endpoint> endpoints;
  endpoints.reserve(P);
  for (Rank r = 0; r < P; ++r) {
    EndpointHooks hooks;
    hooks.on_complete = [&results, r](const Completion& c) { results[r] = c.sum; };
    endpoints.emplace_back(r, EndpointConfig{P, 1, false,
                                             topology::MaskRule::kRotating, schedule},
                           transport, std::move(hooks), buffers[r]);
  }
  sim.set_handler([&](netsim::SimEvent& ev) {
    endpoints[ev.target].on_message(ev.source, ev.body);
  });
  for (Rank r = 0; r < P; ++r) {
    if (auto done = endpoints[r].join_sync(t, buffers[r])) {
      results[r] = std::move(done->sum);
    }
  }
  sim.run_until_idle();
  for (Rank r = 0; r < P; ++r) {
    if (results[r].size() != buffers[r].size()) {
      throw ProtocolFault("sync_allreduce: rank " + std::to_string(r) +
                          " did not complete");
    }
  }
  return results;
}

}  // namespace wagma::collective
