#pragma once

#include <cstdint>
#include <vector>

namespace wagma {

using Rank = std::uint32_t;
using Iteration = std::uint64_t;

/// Dense model or gradient vector.
using Vec = std::vector<double>;

}  // namespace wagma
