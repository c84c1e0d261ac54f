#include "wagma/wire.hpp"

#include <bit>
#include <string>

#include "wagma/errors.hpp"

namespace wagma::wire {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<T>(in[offset + i]) << (8 * i));
  }
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode(const Message& message) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * message.payload.size());
  out.push_back(static_cast<std::uint8_t>(message.kind));
  put_le<std::uint64_t>(out, message.version);
  put_le<std::uint16_t>(out, message.phase);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(message.payload.size()));
  for (double x : message.payload) {
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

Message decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw ProtocolFault("wire: truncated header (" + std::to_string(bytes.size()) +
                        " bytes)");
  }
  Message m;
  const auto kind = bytes[0];
  if (kind < 1 || kind > 3) {
    throw ProtocolFault("wire: unknown message kind " + std::to_string(kind));
  }
  m.kind = static_cast<Kind>(kind);
  m.version = get_le<std::uint64_t>(bytes, 1);
  m.phase = get_le<std::uint16_t>(bytes, 9);
  const auto length = get_le<std::uint32_t>(bytes, 11);
  if (bytes.size() != kHeaderBytes + 8ull * length) {
    throw ProtocolFault("wire: payload length " + std::to_string(length) +
                        " does not match " + std::to_string(bytes.size()) +
                        " bytes");
  }
  m.payload.resize(length);
  for (std::uint32_t i = 0; i < length; ++i) {
    m.payload[i] =
        std::bit_cast<double>(get_le<std::uint64_t>(bytes, kHeaderBytes + 8ull * i));
  }
  return m;
}

}  // namespace wagma::wire
