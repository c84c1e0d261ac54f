#include <gtest/gtest.h>

#include <cstring>

#include "wagma/errors.hpp"
#include "wagma/wire.hpp"

using namespace wagma;
using namespace wagma::wire;

TEST(Wire, LittleEndianLayout) {
  const Message m{Kind::kPhase, 0x0102030405060708ULL, 0x0a0b, {1.0}};
  const auto bytes = encode(m);
  ASSERT_EQ(bytes.size(), kHeaderBytes + 8);
  EXPECT_EQ(kHeaderBytes, 15u);
  EXPECT_EQ(bytes[0], 2);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(bytes[1 + i], 8 - i);
  EXPECT_EQ(bytes[9], 0x0b);
  EXPECT_EQ(bytes[10], 0x0a);
  EXPECT_EQ(bytes[11], 1);
  EXPECT_EQ(bytes[12] | bytes[13] | bytes[14], 0);
  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(bytes[21], 0xf0);
  EXPECT_EQ(bytes[22], 0x3f);
}

TEST(Wire, RoundTripIsBitExact) {
  const double tricky[] = {0.0, -0.0, 1e-310, -3.25, 1.0 / 3.0, 6.02e23};
  for (Kind k : {Kind::kAct, Kind::kPhase, Kind::kSync}) {
    Message m{k, 99, 3, std::vector<double>(std::begin(tricky), std::end(tricky))};
    const auto back = decode(encode(m));
    ASSERT_EQ(back.payload.size(), m.payload.size());
    EXPECT_EQ(std::memcmp(back.payload.data(), m.payload.data(), 8 * m.payload.size()), 0);
    EXPECT_EQ(back.kind, k);
    EXPECT_EQ(back.version, 99u);
    EXPECT_EQ(back.phase, 3u);
  }
  EXPECT_EQ(decode(encode({Kind::kAct, 0, 0, {}})).payload.size(), 0u);
}

TEST(Wire, MalformedInputIsAFault) {
  auto bytes = encode({Kind::kSync, 1, 0, {2.0, 3.0}});
  EXPECT_THROW(decode(std::span(bytes).first(10)), ProtocolFault);
  EXPECT_THROW(decode(std::span(bytes).first(bytes.size() - 1)), ProtocolFault);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode(extra), ProtocolFault);
  auto bad = bytes;
  bad[0] = 9;
  EXPECT_THROW(decode(bad), ProtocolFault);
}
