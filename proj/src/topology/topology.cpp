#include "wagma/topology.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <string>

#include "wagma/errors.hpp"

namespace wagma::topology {

bool is_power_of_two(std::uint64_t x) { return std::has_single_bit(x); }

std::uint32_t log2_exact(std::uint64_t x) {
  if (!is_power_of_two(x)) {
    throw InvalidParams("log2_exact: " + std::to_string(x) +
                        " is not a power of two");
  }
  return static_cast<std::uint32_t>(std::countr_zero(x));
}

void validate(const GroupingParams& params) {
  if (!is_power_of_two(params.P)) {
    throw InvalidParams("P=" + std::to_string(params.P) +
                        " is not a power of two");
  }
  if (!is_power_of_two(params.S)) {
    throw InvalidParams("S=" + std::to_string(params.S) +
                        " is not a power of two");
  }
  if (params.S > params.P) {
    throw InvalidParams("S=" + std::to_string(params.S) + " exceeds P=" +
                        std::to_string(params.P));
  }
}

PhasePlan phase_masks(const GroupingParams& params, MaskRule rule) {
  validate(params);
  const std::uint32_t global_phases = log2_exact(params.P);
  const std::uint32_t group_phases = log2_exact(params.S);
  PhasePlan plan;
  if (group_phases == 0) {
    return plan;
  }
  plan.masks.reserve(group_phases);

  // group_phases >= 1 implies global_phases >= 1.
  const std::uint64_t start = (params.t % global_phases) * group_phases % global_phases;

  switch (rule) {
    case MaskRule::kRotating:
      for (std::uint32_t r = 0; r < group_phases; ++r) {
        const auto shift = static_cast<std::uint32_t>((start + r) % global_phases);
        plan.masks.push_back(1u << shift);
      }
      break;
    case MaskRule::kLiteral: {
      std::uint64_t mask = 1;
      std::uint64_t shift = start;
      for (std::uint32_t r = 0; r < group_phases; ++r) {
        mask <<= shift;
        // Saturate instead of overflowing; anything >= P is ignored anyway.
        if (mask >= (std::uint64_t{1} << 32)) {
          mask = std::uint64_t{1} << 31;
        }
        plan.masks.push_back(static_cast<std::uint32_t>(mask));
        shift = (shift + 1) % global_phases;
      }
      break;
    }
  }
  return plan;
}

namespace {

// OR of the masks that address a valid peer. For distinct single-bit masks
// the group of p is exactly {p XOR s : s subset of this span}.
std::uint32_t span_bits(const PhasePlan& plan, std::uint32_t P) {
  std::uint32_t bits = 0;
  for (auto m : plan.masks) {
    if (m < P) {
      bits |= m;
    }
  }
  return bits;
}

}  // namespace

std::vector<Rank> group_members(Rank rank, const PhasePlan& plan,
                                std::uint32_t P) {
  if (rank >= P) {
    throw InvalidParams("rank " + std::to_string(rank) + " out of range");
  }
  const std::uint32_t span = span_bits(plan, P);
  const std::uint32_t base = rank & ~span;
  std::vector<Rank> members;
  // Enumerate all subsets of the span bits.
  std::uint32_t sub = 0;
  do {
    members.push_back(base | sub);
    sub = (sub - span) & span;
  } while (sub != 0);
  std::sort(members.begin(), members.end());
  return members;
}

std::size_t GroupPartition::group_of(Rank rank) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (std::binary_search(groups[g].begin(), groups[g].end(), rank)) {
      return g;
    }
  }
  throw InvalidParams("rank " + std::to_string(rank) + " not in partition");
}

GroupPartition compute_groups(const GroupingParams& params, MaskRule rule) {
  const PhasePlan plan = phase_masks(params, rule);
  const std::uint32_t span = span_bits(plan, params.P);

  std::map<std::uint32_t, std::vector<Rank>> by_base;
  for (Rank p = 0; p < params.P; ++p) {
    by_base[p & ~span].push_back(p);
  }

  GroupPartition partition;
  partition.iteration = params.t;
  partition.groups.reserve(by_base.size());
  for (auto& [base, members] : by_base) {
    partition.groups.push_back(std::move(members));
  }
  // base is the smallest member of its group, so map order is already the
  // required order.
  return partition;
}

Rank peer(Rank rank, std::uint32_t mask, std::uint32_t P) {
  if (rank >= P) {
    throw InvalidParams("peer: rank " + std::to_string(rank) +
                        " out of range for P=" + std::to_string(P));
  }
  if (mask >= P || !is_power_of_two(mask)) {
    throw InvalidParams("peer: mask " + std::to_string(mask) +
                        " is not a power of two below P=" + std::to_string(P));
  }
  return rank ^ mask;
}

bool mixing_reachable(const GroupingParams& params, Iteration start_t,
                      std::uint64_t k, MaskRule rule) {
  validate(params);
  if (k == 0) {
    throw InvalidParams("mixing_reachable: k must be >= 1");
  }
  const std::uint32_t P = params.P;
  const std::size_t words = (P + 63) / 64;

  // known[i] is the set of origins whose information rank i has seen.
  std::vector<std::uint64_t> known(static_cast<std::size_t>(P) * words, 0);
  for (Rank i = 0; i < P; ++i) {
    known[i * words + i / 64] |= std::uint64_t{1} << (i % 64);
  }

  std::vector<std::uint64_t> merged(words);
  for (std::uint64_t step = 0; step < k; ++step) {
    const GroupPartition partition =
        compute_groups({P, params.S, start_t + step}, rule);
    for (const auto& group : partition.groups) {
      std::fill(merged.begin(), merged.end(), 0);
      for (Rank m : group) {
        for (std::size_t w = 0; w < words; ++w) {
          merged[w] |= known[m * words + w];
        }
      }
      for (Rank m : group) {
        std::copy(merged.begin(), merged.end(), known.begin() + m * words);
      }
    }
  }

  for (Rank i = 0; i < P; ++i) {
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint32_t bits_here =
          (w + 1) * 64 <= P ? 64 : static_cast<std::uint32_t>(P - w * 64);
      const std::uint64_t full =
          bits_here == 64 ? ~std::uint64_t{0}
                          : (std::uint64_t{1} << bits_here) - 1;
      if (known[i * words + w] != full) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace wagma::topology
