#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "wagma/types.hpp"

namespace wagma::netsim {

/// Simulated time in integer microseconds. Totally ordered, exact arithmetic.
class SimTime {
 public:
  constexpr SimTime() = default;

  static constexpr SimTime from_micros(std::int64_t us) { return SimTime(us); }
  static SimTime from_ms(double ms);

  constexpr std::int64_t micros() const { return micros_; }
  constexpr double ms() const { return static_cast<double>(micros_) / 1000.0; }

  constexpr SimTime operator+(SimTime o) const { return SimTime(micros_ + o.micros_); }
  constexpr SimTime operator-(SimTime o) const { return SimTime(micros_ - o.micros_); }
  constexpr SimTime& operator+=(SimTime o) {
    micros_ += o.micros_;
    return *this;
  }
  constexpr auto operator<=>(const SimTime&) const = default;

 private:
  constexpr explicit SimTime(std::int64_t us) : micros_(us) {}
  std::int64_t micros_ = 0;
};

enum class EventKind : std::uint8_t { kMessageArrival, kComputeDone, kTimer };

const char* to_string(EventKind kind);

struct SimEvent {
  SimTime time;
  /// Global tiebreak counter, assigned by the simulator at scheduling time.
  std::uint64_t seq = 0;
  Rank target = 0;
  EventKind kind = EventKind::kTimer;
  /// Sender, for message arrivals.
  Rank source = 0;
  /// Iteration for compute-done events, caller-defined for timers.
  std::uint64_t tag = 0;
  /// Per ordered (source, target) channel sequence number.
  std::uint64_t channel_seq = 0;
  std::vector<std::uint8_t> body;
};

/// Straggler injection: a fixed number of victims per iteration receive an
/// extra compute delay. Victims are a pure function of (seed, iteration).
struct StragglerPolicy {
  std::uint32_t victims_per_iteration = 0;
  SimTime extra_delay;
  std::uint64_t selection_seed = 0;

  bool operator==(const StragglerPolicy&) const = default;
};

/// Per-iteration compute cost and per-message latency. Jitter is uniform on
/// [0, max]; it is a stand-in for background variability, not a calibrated
/// noise model.
struct DelayModel {
  SimTime base_compute = SimTime::from_micros(1000);
  SimTime compute_jitter_max;
  SimTime link_latency = SimTime::from_micros(1000);
  SimTime link_jitter_max;
  StragglerPolicy straggler;

  /// Throws InvalidParams on negative delays or more victims than ranks.
  void validate(std::uint32_t P) const;

  bool operator==(const DelayModel&) const = default;
};

/// Sorted victims of `iteration`.
std::vector<Rank> straggler_victims(const StragglerPolicy& policy,
                                    std::uint32_t P, Iteration iteration);

SimTime compute_delay(Rank proc, Iteration iteration, const DelayModel& model,
                      std::uint32_t P, std::uint64_t rng_seed);

/// splitmix64 finaliser, used to derive independent seeds from tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

struct SimStats {
  std::uint64_t events_processed = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t bytes_sent = 0;
};

struct TraceEntry {
  SimTime time;
  std::uint64_t seq = 0;
  Rank target = 0;
  EventKind kind = EventKind::kTimer;
  Rank source = 0;

  bool operator==(const TraceEntry&) const = default;
};

/// Single-threaded discrete-event loop over one global (time, seq) queue.
/// Links are reliable and FIFO per ordered pair of ranks.
class Simulator {
 public:
  using Handler = std::function<void(SimEvent&)>;

  struct Options {
    std::uint32_t ranks = 1;
    SimTime link_latency = SimTime::from_micros(1000);
    SimTime link_jitter_max;
    std::uint64_t seed = 0;
    std::uint64_t event_budget = 50'000'000;
  };

  explicit Simulator(Options options);

  void set_handler(Handler handler) { handler_ = std::move(handler); }

  /// Throws TimeTravelError if event.time < now().
  void schedule(SimEvent event);
  void schedule_after(SimTime delay, Rank target, EventKind kind,
                      std::uint64_t tag);
  void send(Rank from, Rank to, std::vector<std::uint8_t> body);

  /// Processes events in (time, seq) order until the queue drains. Throws
  /// BudgetExhausted once more than event_budget events were processed.
  SimTime run_until_idle();

  SimTime now() const { return now_; }
  bool idle() const { return queue_.empty(); }
  std::uint32_t ranks() const { return options_.ranks; }
  const SimStats& stats() const { return stats_; }

  void enable_trace(bool on) { tracing_ = on; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  /// One tab-separated line per processed event: time_ms, seq, target, kind.
  void dump_trace(std::ostream& out) const;

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.time != b.time) {
        return a.time > b.time;
      }
      return a.seq > b.seq;
    }
  };

  void check_rank(Rank r, const char* what) const;
  std::size_t channel(Rank from, Rank to) const {
    return static_cast<std::size_t>(from) * options_.ranks + to;
  }

  Options options_;
  Handler handler_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  SimTime now_;
  std::uint64_t next_seq_ = 0;
  std::mt19937_64 link_rng_;
  std::vector<SimTime> channel_last_arrival_;
  std::vector<std::uint64_t> channel_sent_;
  std::vector<std::uint64_t> channel_delivered_;
  SimStats stats_;
  bool tracing_ = false;
  std::vector<TraceEntry> trace_;
};

}  // namespace wagma::netsim
