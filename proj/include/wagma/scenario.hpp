#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wagma/netsim.hpp"
#include "wagma/topology.hpp"

namespace wagma::collective {

/// Randomised end-to-end exercise of the group allreduce protocol without an
/// optimizer: each rank loops compute -> join, with a synthetic fresh buffer
/// per (rank, iteration). Every completed accumulator is checked against the
/// exact sum of the buffers its group members actually contributed.
struct ScenarioConfig {
  std::uint32_t P = 4;
  std::uint32_t S = 2;
  Iteration rounds = 8;
  std::optional<Iteration> tau;
  bool activation = true;
  /// Small integers stored in doubles: sums must then be exact.
  bool integer_payloads = true;
  std::uint32_t dimension = 3;
  netsim::DelayModel delays;
  std::uint64_t seed = 0;
  /// Flip one payload bit of the first phase message rank 0 sends.
  bool corrupt_one_phase_payload = false;
};

struct ScenarioReport {
  std::uint64_t instances_completed = 0;
  std::uint64_t duplicate_executions = 0;
  std::uint64_t sum_mismatches = 0;
  double max_relative_error = 0.0;
  std::uint64_t timely_instances = 0;
  std::uint64_t stale_instances = 0;
  std::uint64_t activation_messages = 0;
  /// Max activation messages attributed to one (version, root) tree.
  std::uint64_t max_activations_per_tree = 0;
  /// Largest (version - contributed stamp) observed in a group round.
  std::int64_t max_staleness = 0;
  /// Joins at which the rank had not been activated and became an activator.
  std::uint64_t activator_joins = 0;
  std::vector<std::string> faults;

  bool ok() const {
    return duplicate_executions == 0 && sum_mismatches == 0 && faults.empty();
  }
};

ScenarioReport run_collective_scenario(const ScenarioConfig& config);

}  // namespace wagma::collective
