#include "wagma/training.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <string>

#include "wagma/collective.hpp"
#include "wagma/errors.hpp"
#include "wagma/wire.hpp"

namespace wagma::training {

using collective::RoundKind;
using optim::Mode;

double TrainingResult::time_per_iteration_ms() const {
  return rows.empty() ? 0.0 : end_time.ms() / static_cast<double>(rows.size());
}

namespace {

// Baseline message phases (carried in wire::Kind::kSync messages).
constexpr std::uint16_t kRingModel = 0;
constexpr std::uint16_t kPairRequest = 1;
constexpr std::uint16_t kPairReply = 2;

class TrainingRun {
 public:
  TrainingRun(const optim::OptimizerConfig& config, const problems::Problem& problem,
              const netsim::DelayModel& delays, std::uint64_t seed,
              const TrainingOptions& options)
      : cfg_(config),
        problem_(problem),
        delays_(delays),
        seed_(seed),
        options_(options),
        schedule_(config.schedule()),
        sim_({.ranks = config.P,
              .link_latency = delays.link_latency,
              .link_jitter_max = delays.link_jitter_max,
              .seed = seed,
              .event_budget = options.event_budget}),
        transport_(sim_) {}

  TrainingResult run();

 private:
  bool uses_endpoints() const {
    return cfg_.mode == Mode::kWagma || cfg_.mode == Mode::kLocalSgd ||
           cfg_.mode == Mode::kAllreduce;
  }

  void start_compute(Rank r);
  void on_compute_done(Rank r, Iteration t);
  void on_round(Rank r, const optim::RoundResult& round);
  void on_baseline_message(Rank to, Rank from, const wire::Message& msg);
  void try_ring_average(Rank r);
  void finish_iteration(Rank r);
  void record(Rank r, Iteration t);
  void emit_row(Iteration t);
  void note_staleness(Iteration version, std::int64_t staleness);

  const optim::OptimizerConfig& cfg_;
  const problems::Problem& problem_;
  const netsim::DelayModel& delays_;
  std::uint64_t seed_;
  const TrainingOptions& options_;
  collective::RoundSchedule schedule_;
  netsim::Simulator sim_;
  collective::SimTransport transport_;

  std::vector<optim::WorkerState> workers_;
  std::vector<problems::BatchSampler> samplers_;
  std::vector<Vec> pending_grad_;
  std::vector<collective::Endpoint> endpoints_;

  // D-PSGD: (iteration, sender) -> model, per receiver.
  std::vector<std::map<std::pair<Iteration, Rank>, Vec>> ring_inbox_;
  std::vector<bool> ring_waiting_;

  struct PendingRow {
    std::vector<Vec> replicas;
    std::uint32_t filled = 0;
  };
  std::map<Iteration, PendingRow> pending_rows_;
  std::map<Iteration, std::int64_t> staleness_;
  Iteration next_row_ = 0;
  TrainingResult result_;
};

TrainingResult TrainingRun::run() {
  const std::uint32_t P = cfg_.P;
  const Vec init = problem_.initial_point();
  const auto shards = problems::make_partition(problem_.sample_count(), P, seed_);
  workers_.reserve(P);
  samplers_.reserve(P);
  for (Rank r = 0; r < P; ++r) {
    workers_.emplace_back(r, init);
    samplers_.emplace_back(shards[r], cfg_.b, netsim::mix_seed(seed_, 0x5a3b, r));
  }
  pending_grad_.assign(P, Vec{});

  if (uses_endpoints()) {
    const std::uint32_t S = cfg_.mode == Mode::kWagma ? cfg_.S : 1;
    const bool activation = cfg_.mode == Mode::kWagma && cfg_.alpha;
    endpoints_.reserve(P);
    for (Rank r = 0; r < P; ++r) {
      collective::EndpointHooks hooks;
      hooks.on_complete = [this, r](const collective::Completion& c) {
        on_round(r, {c.kind, c.sum, c.timely});
      };
      hooks.on_exchange_start = [this](Iteration v, RoundKind kind, std::int64_t stamp,
                                       std::span<const double>) {
        if (kind == RoundKind::kGroup) {
          note_staleness(v, static_cast<std::int64_t>(v) - stamp);
        }
      };
      // Allreduce-SGD reduces gradients, so its buffers start at zero.
      Vec initial = cfg_.mode == Mode::kAllreduce ? Vec(init.size(), 0.0) : init;
      endpoints_.emplace_back(r,
                              collective::EndpointConfig{P, S, activation,
                                                         topology::MaskRule::kRotating,
                                                         schedule_},
                              transport_, std::move(hooks), std::move(initial));
    }
  } else {
    ring_inbox_.resize(P);
    ring_waiting_.assign(P, false);
  }

  sim_.enable_trace(options_.trace != nullptr);
  sim_.set_handler([this](netsim::SimEvent& ev) {
    if (ev.kind == netsim::EventKind::kComputeDone) {
      on_compute_done(ev.target, ev.tag);
    } else if (ev.kind == netsim::EventKind::kMessageArrival) {
      if (uses_endpoints()) {
        endpoints_[ev.target].on_message(ev.source, ev.body);
      } else {
        on_baseline_message(ev.target, ev.source, wire::decode(ev.body));
      }
    }
  });

  for (Rank r = 0; r < P; ++r) start_compute(r);
  result_.end_time = sim_.run_until_idle();

  if (next_row_ != cfg_.T) {
    throw ProtocolFault("training stalled after " + std::to_string(next_row_) + " of " +
                        std::to_string(cfg_.T) + " iterations");
  }
  result_.stats = sim_.stats();
  for (const auto& w : workers_) result_.final_replicas.push_back(w.W);
  const auto diag = optim::compute_diagnostics(result_.final_replicas, problem_);
  result_.final_accuracy = problem_.accuracy(diag.mu);
  if (options_.trace) sim_.dump_trace(*options_.trace);
  return std::move(result_);
}

void TrainingRun::start_compute(Rank r) {
  auto& w = workers_[r];
  if (w.iter >= cfg_.T) return;
  // The gradient is taken at the model held when compute starts.
  pending_grad_[r] = optim::sample_gradient(w, problem_, samplers_[r]);
  double norm = 0.0;
  for (double x : pending_grad_[r]) norm += x * x;
  result_.M_hat = std::max(result_.M_hat, std::sqrt(norm));
  sim_.schedule_after(netsim::compute_delay(r, w.iter, delays_, cfg_.P, seed_), r,
                      netsim::EventKind::kComputeDone, w.iter);
}

void TrainingRun::on_compute_done(Rank r, Iteration t) {
  auto& w = workers_[r];
  if (w.iter != t) {
    throw ProtocolFault("compute completion for iteration " + std::to_string(t) +
                        " at rank " + std::to_string(r) + " which is at " +
                        std::to_string(w.iter));
  }
  const Vec grad = std::move(pending_grad_[r]);

  switch (cfg_.mode) {
    case Mode::kAllreduce: {
      if (auto done = endpoints_[r].join_sync(t, grad)) {
        on_round(r, {done->kind, std::move(done->sum), true});
      }
      return;
    }
    case Mode::kWagma:
    case Mode::kLocalSgd: {
      optim::apply_update(w, grad, cfg_);
      switch (schedule_.kind(t)) {
        case RoundKind::kLocal:
          on_round(r, {RoundKind::kLocal, {}, true});
          return;
        case RoundKind::kGroup: {
          auto jr = endpoints_[r].join_or_check(t, w.W_prime);
          if (jr.completion) {
            on_round(r, {RoundKind::kGroup, std::move(jr.completion->sum),
                         jr.status == collective::JoinResult::Status::kActive &&
                             jr.completion->timely});
          }
          return;
        }
        case RoundKind::kSync:
          if (auto done = endpoints_[r].join_sync(t, w.W_prime)) {
            on_round(r, {done->kind, std::move(done->sum), true});
          }
          return;
      }
      return;
    }
    case Mode::kDpsgd: {
      optim::apply_update(w, grad, cfg_);
      const std::uint32_t P = cfg_.P;
      if (P == 1) {
        on_round(r, {RoundKind::kLocal, {}, true});
        return;
      }
      const Rank left = (r + P - 1) % P;
      const Rank right = (r + 1) % P;
      const auto bytes =
          wire::encode({wire::Kind::kSync, t, kRingModel, w.W_prime});
      sim_.send(r, left, bytes);
      if (right != left) sim_.send(r, right, bytes);
      ring_waiting_[r] = true;
      try_ring_average(r);
      return;
    }
    case Mode::kAdpsgd: {
      optim::apply_update(w, grad, cfg_);
      w.W = w.W_prime;
      if (cfg_.P == 1) {
        finish_iteration(r);
        return;
      }
      const Rank partner = optim::adpsgd_partner(r, cfg_.P, t, seed_);
      sim_.send(r, partner, wire::encode({wire::Kind::kSync, t, kPairRequest, w.W}));
      return;
    }
  }
}

void TrainingRun::on_round(Rank r, const optim::RoundResult& round) {
  auto& w = workers_[r];
  if (cfg_.mode == Mode::kAllreduce) {
    // Average gradient, then the usual update on every replica.
    Vec avg(round.sum.size());
    for (std::size_t k = 0; k < avg.size(); ++k) {
      avg[k] = round.sum[k] / static_cast<double>(cfg_.P);
    }
    optim::apply_update(w, avg, cfg_);
    optim::wagma_round(w, cfg_, {RoundKind::kLocal, {}, true});
    w.r = w.q = w.iter;
  } else {
    optim::wagma_round(w, cfg_, round);
  }
  if (cfg_.tau && w.iter - w.r >= *cfg_.tau &&
      (cfg_.mode == Mode::kWagma || cfg_.mode == Mode::kLocalSgd)) {
    throw ProtocolFault("rank " + std::to_string(r) + " went " +
                        std::to_string(w.iter - w.r) +
                        " iterations without a global sync");
  }
  finish_iteration(r);
}

void TrainingRun::finish_iteration(Rank r) {
  auto& w = workers_[r];
  if (cfg_.mode == Mode::kAdpsgd || cfg_.mode == Mode::kDpsgd) {
    // Baselines that bypass wagma_round track iterations here.
    if (cfg_.mode == Mode::kAdpsgd) ++w.iter;
  }
  record(r, w.iter - 1);
  start_compute(r);
}

void TrainingRun::on_baseline_message(Rank to, Rank from, const wire::Message& msg) {
  if (msg.kind != wire::Kind::kSync) {
    throw ProtocolFault("unexpected message kind in baseline mode");
  }
  auto& w = workers_[to];
  switch (msg.phase) {
    case kRingModel: {
      if (cfg_.mode != Mode::kDpsgd) throw ProtocolFault("ring message outside D-PSGD");
      const bool fresh = ring_inbox_[to].emplace(std::make_pair(msg.version, from),
                                                 msg.payload).second;
      if (!fresh) throw ProtocolFault("duplicate ring message");
      try_ring_average(to);
      return;
    }
    case kPairRequest: {
      if (cfg_.mode != Mode::kAdpsgd) throw ProtocolFault("pair request outside AD-PSGD");
      // Served by the communication context against the current replica.
      w.W = optim::pair_average(msg.payload, w.W);
      sim_.send(to, from, wire::encode({wire::Kind::kSync, msg.version, kPairReply, w.W}));
      return;
    }
    case kPairReply: {
      if (cfg_.mode != Mode::kAdpsgd || msg.version != w.iter) {
        throw ProtocolFault("unexpected pair reply");
      }
      w.W = msg.payload;
      finish_iteration(to);
      return;
    }
    default:
      throw ProtocolFault("unknown baseline phase " + std::to_string(msg.phase));
  }
}

void TrainingRun::try_ring_average(Rank r) {
  if (!ring_waiting_[r]) return;
  auto& w = workers_[r];
  const std::uint32_t P = cfg_.P;
  const Rank left = (r + P - 1) % P;
  const Rank right = (r + 1) % P;
  auto& inbox = ring_inbox_[r];
  auto l = inbox.find({w.iter, left});
  auto rt = inbox.find({w.iter, right});
  if (l == inbox.end() || rt == inbox.end()) return;
  ring_waiting_[r] = false;
  w.W = optim::ring_average(l->second, w.W_prime, rt->second);
  inbox.erase(l);
  if (right != left) inbox.erase(rt);
  ++w.iter;
  finish_iteration(r);
}

void TrainingRun::note_staleness(Iteration version, std::int64_t staleness) {
  if (cfg_.tau && staleness >= static_cast<std::int64_t>(*cfg_.tau)) {
    throw ProtocolFault("contribution to version " + std::to_string(version) + " is " +
                        std::to_string(staleness) + " iterations old, tau=" +
                        std::to_string(*cfg_.tau));
  }
  auto& slot = staleness_[version];
  slot = std::max(slot, staleness);
  result_.max_staleness = std::max(result_.max_staleness, staleness);
}

void TrainingRun::record(Rank r, Iteration t) {
  auto& row = pending_rows_[t];
  if (row.replicas.empty()) row.replicas.resize(cfg_.P);
  row.replicas[r] = workers_[r].W;
  if (++row.filled == cfg_.P) {
    if (t != next_row_) {
      throw ProtocolFault("iteration " + std::to_string(t) +
                          " finished before iteration " + std::to_string(next_row_));
    }
    emit_row(t);
  }
}

void TrainingRun::emit_row(Iteration t) {
  auto node = pending_rows_.extract(t);
  const auto& replicas = node.mapped().replicas;
  optim::Diagnostics diag = optim::compute_diagnostics(replicas, problem_);

  const bool synced = uses_endpoints() && schedule_.kind(t) == RoundKind::kSync;
  if (synced) {
    for (const auto& w : replicas) {
      if (w != replicas.front()) {
        throw ProtocolFault("replicas differ after global sync at iteration " +
                            std::to_string(t));
      }
    }
  }
  if (!std::isfinite(diag.loss_mu) || !std::isfinite(diag.gamma)) {
    throw DivergenceError("non-finite loss at iteration " + std::to_string(t));
  }

  auto st = staleness_.extract(t);
  diag.max_staleness_used = st ? st.mapped() : 0;
  diag.M_hat = result_.M_hat;

  MetricsRecord rec;
  rec.iteration = t;
  rec.sim_time_ms = sim_.now().ms();
  rec.loss_mu = diag.loss_mu;
  rec.grad_norm_sq_mu = diag.grad_norm_sq_mu;
  rec.gamma = diag.gamma;
  rec.max_staleness = diag.max_staleness_used;
  rec.msgs_total = sim_.stats().messages_sent;
  rec.bytes_total = sim_.stats().bytes_sent;
  result_.rows.push_back(rec);
  if (options_.on_row) options_.on_row(rec, diag, replicas);
  ++next_row_;
}

}  // namespace

TrainingResult run_training(const optim::OptimizerConfig& config,
                            const problems::Problem& problem,
                            const netsim::DelayModel& delays, std::uint64_t seed,
                            const TrainingOptions& options) {
  config.validate();
  delays.validate(config.P);
  if (problem.sample_count() < config.P) {
    throw InvalidParams("problem has fewer samples than workers");
  }
  TrainingRun run(config, problem, delays, seed, options);
  return run.run();
}

}  // namespace wagma::training
