#include "wagma/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "wagma/errors.hpp"

namespace wagma::netsim {

SimTime SimTime::from_ms(double ms) {
  return SimTime(static_cast<std::int64_t>(std::llround(ms * 1000.0)));
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kMessageArrival:
      return "msg";
    case EventKind::kComputeDone:
      return "compute";
    case EventKind::kTimer:
      return "timer";
  }
  return "?";
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

void DelayModel::validate(std::uint32_t P) const {
  const SimTime zero;
  if (base_compute < zero || compute_jitter_max < zero || link_latency < zero ||
      link_jitter_max < zero || straggler.extra_delay < zero) {
    throw InvalidParams("delay model: all delays must be non-negative");
  }
  if (straggler.victims_per_iteration > P) {
    throw InvalidParams("delay model: victims_per_iteration exceeds P");
  }
}

std::vector<Rank> straggler_victims(const StragglerPolicy& policy,
                                    std::uint32_t P, Iteration iteration) {
  if (policy.victims_per_iteration > P) {
    throw InvalidParams("straggler policy: more victims than ranks");
  }
  std::vector<Rank> ranks(P);
  std::iota(ranks.begin(), ranks.end(), Rank{0});
  std::mt19937_64 rng(mix_seed(policy.selection_seed, iteration));
  // Partial Fisher-Yates.
  for (std::uint32_t i = 0; i < policy.victims_per_iteration; ++i) {
    std::uniform_int_distribution<std::uint32_t> pick(i, P - 1);
    std::swap(ranks[i], ranks[pick(rng)]);
  }
  ranks.resize(policy.victims_per_iteration);
  std::sort(ranks.begin(), ranks.end());
  return ranks;
}

SimTime compute_delay(Rank proc, Iteration iteration, const DelayModel& model,
                      std::uint32_t P, std::uint64_t rng_seed) {
  SimTime delay = model.base_compute;
  if (model.compute_jitter_max.micros() > 0) {
    std::mt19937_64 rng(mix_seed(rng_seed, proc, iteration));
    std::uniform_int_distribution<std::int64_t> jitter(
        0, model.compute_jitter_max.micros());
    delay += SimTime::from_micros(jitter(rng));
  }
  if (model.straggler.victims_per_iteration > 0) {
    const auto victims = straggler_victims(model.straggler, P, iteration);
    if (std::binary_search(victims.begin(), victims.end(), proc)) {
      delay += model.straggler.extra_delay;
    }
  }
  return delay;
}

Simulator::Simulator(Options options)
    : options_(options),
      link_rng_(mix_seed(options.seed, 0x11c5)),
      channel_last_arrival_(static_cast<std::size_t>(options.ranks) * options.ranks),
      channel_sent_(channel_last_arrival_.size(), 0),
      channel_delivered_(channel_last_arrival_.size(), 0) {
  if (options_.ranks == 0) {
    throw InvalidParams("simulator needs at least one rank");
  }
  if (options_.link_latency < SimTime() || options_.link_jitter_max < SimTime()) {
    throw InvalidParams("simulator: negative link latency");
  }
}

void Simulator::check_rank(Rank r, const char* what) const {
  if (r >= options_.ranks) {
    throw InvalidParams(std::string("simulator: invalid ") + what + " rank " +
                        std::to_string(r));
  }
}

void Simulator::schedule(SimEvent event) {
  if (event.time < now_) {
    throw TimeTravelError("event scheduled at " + std::to_string(event.time.ms()) +
                          " ms before now=" + std::to_string(now_.ms()) + " ms");
  }
  check_rank(event.target, "target");
  event.seq = next_seq_++;
  queue_.push(std::move(event));
}

void Simulator::schedule_after(SimTime delay, Rank target, EventKind kind,
                               std::uint64_t tag) {
  SimEvent ev;
  ev.time = now_ + delay;
  ev.target = target;
  ev.kind = kind;
  ev.tag = tag;
  schedule(std::move(ev));
}

void Simulator::send(Rank from, Rank to, std::vector<std::uint8_t> body) {
  check_rank(from, "source");
  check_rank(to, "destination");
  SimTime latency = options_.link_latency;
  if (options_.link_jitter_max.micros() > 0) {
    std::uniform_int_distribution<std::int64_t> jitter(
        0, options_.link_jitter_max.micros());
    latency += SimTime::from_micros(jitter(link_rng_));
  }
  const std::size_t ch = channel(from, to);
  // FIFO per channel: never overtake an earlier message on the same link.
  SimTime arrival = std::max(now_ + latency, channel_last_arrival_[ch]);
  channel_last_arrival_[ch] = arrival;

  SimEvent ev;
  ev.time = arrival;
  ev.target = to;
  ev.source = from;
  ev.kind = EventKind::kMessageArrival;
  ev.channel_seq = channel_sent_[ch]++;
  stats_.messages_sent += 1;
  stats_.bytes_sent += body.size();
  ev.body = std::move(body);
  schedule(std::move(ev));
}

SimTime Simulator::run_until_idle() {
  while (!queue_.empty()) {
    if (stats_.events_processed >= options_.event_budget) {
      throw BudgetExhausted("simulator: event budget of " +
                            std::to_string(options_.event_budget) +
                            " events exhausted");
    }
    // priority_queue::top is const; the event is moved out before pop.
    SimEvent ev = std::move(const_cast<SimEvent&>(queue_.top()));
    queue_.pop();
    now_ = ev.time;
    ++stats_.events_processed;

    if (ev.kind == EventKind::kMessageArrival) {
      const std::size_t ch = channel(ev.source, ev.target);
      if (ev.channel_seq != channel_delivered_[ch]) {
        throw ProtocolFault("simulator: FIFO violated on channel " +
                            std::to_string(ev.source) + "->" +
                            std::to_string(ev.target));
      }
      ++channel_delivered_[ch];
    }
    if (tracing_) {
      trace_.push_back({ev.time, ev.seq, ev.target, ev.kind, ev.source});
    }
    if (handler_) {
      handler_(ev);
    }
  }
  return now_;
}

void Simulator::dump_trace(std::ostream& out) const {
  char line[96];
  for (const auto& e : trace_) {
    std::snprintf(line, sizeof(line), "%.3f\t%llu\t%u\t%s\n", e.time.ms(),
                  static_cast<unsigned long long>(e.seq), e.target,
                  to_string(e.kind));
    out << line;
  }
}

}  // namespace wagma::netsim
