#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "wagma/netsim.hpp"
#include "wagma/optim.hpp"
#include "wagma/problems.hpp"

namespace wagma::training {

/// One row per iteration t, describing the replicas W_{t+1} once every worker
/// has finished round t.
struct MetricsRecord {
  Iteration iteration = 0;
  double sim_time_ms = 0.0;
  double loss_mu = 0.0;
  double grad_norm_sq_mu = 0.0;
  double gamma = 0.0;
  std::int64_t max_staleness = 0;
  std::uint64_t msgs_total = 0;
  std::uint64_t bytes_total = 0;

  bool operator==(const MetricsRecord&) const = default;
};

struct TrainingOptions {
  /// Called for every row in iteration order with the replicas it summarises.
  std::function<void(const MetricsRecord&, const optim::Diagnostics&,
                     std::span<const Vec> replicas)>
      on_row;
  /// Optional event-trace dump.
  std::ostream* trace = nullptr;
  std::uint64_t event_budget = 200'000'000;
};

struct TrainingResult {
  std::vector<MetricsRecord> rows;
  std::vector<Vec> final_replicas;
  netsim::SimTime end_time;
  netsim::SimStats stats;
  /// Largest stochastic-gradient norm seen by any worker.
  double M_hat = 0.0;
  std::int64_t max_staleness = 0;
  /// Accuracy of the final mean model, for classification problems.
  std::optional<double> final_accuracy;

  double time_per_iteration_ms() const;
};

/// Runs config.T iterations on all config.P workers over the simulated
/// network. Deterministic in (config, problem, delays, seed).
///
/// Throws ProtocolFault on protocol violations, including a contribution
/// older than tau - 1 iterations or replicas that differ after a global
/// sync; DivergenceError on non-finite gradients or loss; BudgetExhausted
/// from the simulator.
TrainingResult run_training(const optim::OptimizerConfig& config,
                            const problems::Problem& problem,
                            const netsim::DelayModel& delays, std::uint64_t seed,
                            const TrainingOptions& options = {});

}  // namespace wagma::training
