#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace wagma::wire {

enum class Kind : std::uint8_t { kAct = 1, kPhase = 2, kSync = 3 };

/// Simulated wire message. Encoded little-endian as
///   kind:u8 | version:u64 | phase:u16 | length:u32 | payload: length x f64
/// so traces can be diffed byte-for-byte across runs.
struct Message {
  Kind kind = Kind::kPhase;
  std::uint64_t version = 0;
  std::uint16_t phase = 0;
  std::vector<double> payload;

  bool operator==(const Message&) const = default;
};

inline constexpr std::size_t kHeaderBytes = 1 + 8 + 2 + 4;

std::vector<std::uint8_t> encode(const Message& message);

/// Throws ProtocolFault on truncated input, unknown kind or trailing bytes.
Message decode(std::span<const std::uint8_t> bytes);

}  // namespace wagma::wire
