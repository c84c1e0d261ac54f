#pragma once

#include <cstdint>
#include <vector>

#include "wagma/types.hpp"

namespace wagma::topology {

/// How the butterfly masks of an iteration are derived.
///
/// kRotating executes group_phases consecutive butterfly phases starting at
/// phase (t * group_phases) mod global_phases, so mask r of iteration t is
/// 1 << ((t * group_phases + r) mod global_phases). This reproduces both
/// worked grouping examples for P=8, S=4.
///
/// kLiteral is the plain shift rule, where a single mask variable is
/// shifted left by the running shift in every phase. It diverges from the
/// rotating rule from t=1 onwards and may produce masks >= P, which are
/// ignored when grouping. Kept for divergence checks only.
enum class MaskRule { kRotating, kLiteral };

struct GroupingParams {
  std::uint32_t P = 1;
  std::uint32_t S = 1;
  Iteration t = 0;
};

bool is_power_of_two(std::uint64_t x);

/// log2 of a power of two.
std::uint32_t log2_exact(std::uint64_t x);

/// Throws InvalidParams unless P, S are powers of two with 1 <= S <= P.
void validate(const GroupingParams& params);

struct PhasePlan {
  std::vector<std::uint32_t> masks;

  bool operator==(const PhasePlan&) const = default;
};

PhasePlan phase_masks(const GroupingParams& params,
                      MaskRule rule = MaskRule::kRotating);

/// Disjoint groups of one iteration. Each group is sorted ascending and the
/// groups are ordered by their smallest member.
struct GroupPartition {
  Iteration iteration = 0;
  std::vector<std::vector<Rank>> groups;

  /// Index into `groups` of the group holding `rank`.
  std::size_t group_of(Rank rank) const;

  bool operator==(const GroupPartition& other) const {
    return groups == other.groups;
  }
};

GroupPartition compute_groups(const GroupingParams& params,
                              MaskRule rule = MaskRule::kRotating);

/// Members of the group containing `rank` under `plan`, ascending.
std::vector<Rank> group_members(Rank rank, const PhasePlan& plan,
                                std::uint32_t P);

/// rank XOR mask, range-checked against P.
Rank peer(Rank rank, std::uint32_t mask, std::uint32_t P);

/// True iff information originating at any rank reaches every other rank when
/// the groups of iterations start_t .. start_t + k - 1 are applied in order,
/// with every group fully mixing its members' knowledge each iteration.
bool mixing_reachable(const GroupingParams& params, Iteration start_t,
                      std::uint64_t k, MaskRule rule = MaskRule::kRotating);

}  // namespace wagma::topology
