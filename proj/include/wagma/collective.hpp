#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "wagma/netsim.hpp"
#include "wagma/topology.hpp"
#include "wagma/types.hpp"
#include "wagma/wire.hpp"

namespace wagma::collective {

enum class RoundKind : std::uint8_t {
  kLocal,  ///< no communication in this iteration
  kGroup,  ///< group allreduce over the iteration's butterfly phases
  kSync,   ///< blocking allreduce over all P ranks
};

/// Assigns a round kind to every iteration in [0, total). Iteration t is a
/// sync round iff tau is finite and (t + 1) mod tau == 0.
class RoundSchedule {
 public:
  RoundSchedule() = default;
  RoundSchedule(Iteration total, std::optional<Iteration> tau, bool group_rounds);

  RoundKind kind(Iteration t) const;
  Iteration total() const { return total_; }
  std::optional<Iteration> tau() const { return tau_; }

 private:
  Iteration total_ = 0;
  std::optional<Iteration> tau_;
  bool group_rounds_ = false;
};

enum class InstanceState { kInactive, kActivated, kExchanging, kComplete };

/// Activation notice travelling down the binomial tree rooted at `root`.
/// `hop` is the bit along which it was sent, i.e. the highest set bit of
/// (receiver XOR root). On the wire: kind ACT, phase = hop, payload = {root}.
struct ActivationMessage {
  Iteration version = 0;
  Rank root = 0;
  std::uint16_t hop = 0;
};

wire::Message to_wire(const ActivationMessage& msg);
ActivationMessage activation_from_wire(const wire::Message& msg);

/// Model buffer exposed to the communication context. Writes replace the
/// whole payload at once and stamps never decrease.
class SendBuffer {
 public:
  SendBuffer() = default;
  SendBuffer(Vec initial, std::int64_t stamp)
      : payload_(std::move(initial)), stamp_(stamp) {}

  void install(std::span<const double> fresh, std::int64_t stamp);

  const Vec& payload() const { return payload_; }
  std::int64_t stamped_iteration() const { return stamp_; }

 private:
  Vec payload_;
  std::int64_t stamp_ = -1;
};

struct Completion {
  Iteration version = 0;
  RoundKind kind = RoundKind::kGroup;
  Vec sum;
  /// The process's fresh buffer for `version` was in the send buffer when the
  /// exchange read it.
  bool timely = false;
  std::int64_t contributed_stamp = -1;
};

struct JoinResult {
  enum class Status { kActive, kAlreadyDone };

  Status status = Status::kActive;
  /// For kAlreadyDone: the completed sum. For kActive: set when the instance
  /// finished during the call itself (e.g. S == 1), otherwise delivered later
  /// through EndpointHooks::on_complete.
  std::optional<Completion> completion;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(Rank from, Rank to, std::vector<std::uint8_t> bytes) = 0;
};

class SimTransport final : public Transport {
 public:
  explicit SimTransport(netsim::Simulator& sim) : sim_(&sim) {}
  void send(Rank from, Rank to, std::vector<std::uint8_t> bytes) override {
    sim_->send(from, to, std::move(bytes));
  }

 private:
  netsim::Simulator* sim_;
};

struct EndpointConfig {
  std::uint32_t P = 1;
  std::uint32_t S = 1;
  /// Wait-avoiding mode: early processes activate late ones. When false the
  /// group allreduce starts only when the process itself joins.
  bool activation = true;
  topology::MaskRule mask_rule = topology::MaskRule::kRotating;
  RoundSchedule schedule;
};

struct EndpointHooks {
  /// Completion of an instance the compute context is waiting on.
  std::function<void(const Completion&)> on_complete;
  /// The exchange for `version` read the send buffer holding `contributed`.
  std::function<void(Iteration version, RoundKind kind, std::int64_t stamp,
                     std::span<const double> contributed)>
      on_exchange_start;
  /// Test-only fault injection on outgoing phase payloads.
  std::function<void(Iteration version, std::uint16_t phase, Vec& payload)>
      mutate_outgoing;
};

/// Communication context of one process: serves activations and phase
/// exchanges from its send buffer, executing each round version exactly once
/// and strictly in version order.
class Endpoint {
 public:
  Endpoint(Rank rank, EndpointConfig config, Transport& transport,
           EndpointHooks hooks, Vec initial_buffer);

  /// The compute context finished iteration `version` of a group round with
  /// model `fresh`. Installs `fresh` in the send buffer. Returns kAlreadyDone
  /// if the round already completed passively, otherwise activates the
  /// collective if nobody has yet and takes part in it.
  JoinResult join_or_check(Iteration version, std::span<const double> fresh);

  /// Enters the blocking all-rank allreduce of sync round `version`. Returns
  /// the completion if it finished during the call.
  std::optional<Completion> join_sync(Iteration version,
                                      std::span<const double> fresh);

  void on_message(Rank from, std::span<const std::uint8_t> bytes);
  void on_activation(Rank from, const ActivationMessage& msg);

  InstanceState state(Iteration version) const;
  const SendBuffer& send_buffer() const { return send_buffer_; }
  std::optional<Iteration> last_completed() const { return last_completed_; }
  Rank rank() const { return rank_; }
  std::uint64_t activation_messages_sent() const { return activations_sent_; }
  /// Versions for which this process received or originated an activation.
  bool was_activated(Iteration version) const;

 private:
  struct Running {
    Iteration version = 0;
    RoundKind kind = RoundKind::kGroup;
    std::vector<std::uint32_t> masks;
    std::size_t phase = 0;
    bool sent_current = false;
    Vec acc;
    std::int64_t stamp = -1;
  };

  std::vector<std::uint32_t> masks_for(Iteration version, RoundKind kind) const;
  void forward_activation(Iteration version, Rank root, std::uint32_t from_bit,
                          std::uint32_t to_bit);
  void on_phase(Rank from, wire::Message msg);
  void start(Iteration version);
  /// Drives the running instance and starts queued ones until blocked.
  void pump();
  void finish();
  void advance_next_version(Iteration from);

  Rank rank_;
  EndpointConfig config_;
  std::uint32_t global_phases_;
  Transport* transport_;
  EndpointHooks hooks_;
  SendBuffer send_buffer_;

  Iteration next_version_ = 0;
  std::optional<Iteration> last_completed_;
  std::optional<Iteration> last_joined_;
  std::optional<Iteration> waiting_join_;
  std::optional<Running> running_;
  /// Activated versions not yet completed -> lowest bit already forwarded.
  std::map<Iteration, std::uint32_t> activation_cover_;
  std::map<std::pair<Iteration, std::uint16_t>, Vec> inbox_;
  std::map<Iteration, Completion> passive_results_;
  std::set<Iteration> activated_history_;
  std::optional<Completion> inline_completion_;
  bool in_join_ = false;
  std::uint64_t activations_sent_ = 0;
};

/// Blocking allreduce of one buffer per rank, executed over the simulated
/// butterfly. Every rank receives a bit-identical sum. Throws ProtocolFault
/// if the ranks are at different iterations.
std::vector<Vec> sync_allreduce(std::span<const Vec> buffers,
                                std::span<const Iteration> iterations);

}  // namespace wagma::collective
