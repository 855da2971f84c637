#include "atomic_sim/packet.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace atomic_sim;

TEST(PhaseKind, ExactlyNineDistinctKinds)
{
    std::set<std::string_view> names;
    for (auto k : kAllPhaseKinds)
        names.insert(to_string(k));
    EXPECT_EQ(names.size(), 9u);
    for (auto n : {"BOOT", "IND", "ACK", "NACK", "SET", "ALERT", "SOLICIT", "REPORT", "STOP"})
        EXPECT_TRUE(names.contains(n)) << n;
    EXPECT_FALSE(phase_kind_from_byte(9).has_value());
}

TEST(NodeFlags, SizedToNetwork)
{
    EXPECT_EQ(NodeFlags(1).bytes().size(), 1u);
    EXPECT_EQ(NodeFlags(8).bytes().size(), 1u);
    EXPECT_EQ(NodeFlags(9).bytes().size(), 2u);
    EXPECT_EQ(NodeFlags(70).bytes().size(), 9u);
}

TEST(NodeFlags, SetTestCount)
{
    NodeFlags f(20);
    f.set(0);
    f.set(9);
    f.set(19);
    EXPECT_TRUE(f.test(9));
    EXPECT_FALSE(f.test(10));
    EXPECT_FALSE(f.test(200));
    EXPECT_EQ(f.count(), 3u);
    f.set(9, false);
    EXPECT_EQ(f.count(), 2u);
    EXPECT_THROW(f.set(24), std::out_of_range);
}

TEST(Wire, LayoutIsLittleEndian)
{
    FloodPacket p;
    p.relay_counter = 3;
    p.phase_type = PhaseKind::Report;
    p.epoch_seq = 0x1234;
    p.flags = NodeFlags(10);
    p.flags.set(1);
    p.flags.set(8);
    p.payload = {0xaa, 0xbb};
    Bytes expected{3, static_cast<std::uint8_t>(PhaseKind::Report), 0x34, 0x12, 2, 0x02, 0x01, 2, 0xaa, 0xbb};
    EXPECT_EQ(encode(p), expected);
    EXPECT_EQ(decode(expected), p);
}

TEST(Wire, EveryKindRoundTrips)
{
    for (auto k : kAllPhaseKinds)
    {
        FloodPacket p;
        p.phase_type = k;
        p.epoch_seq = 77;
        p.flags = NodeFlags(19);
        p.flags.set(18);
        p.payload = {1, 2, 3};
        EXPECT_EQ(decode(encode(p)), p) << to_string(k);
    }
}

TEST(Wire, RandomPacketsRoundTrip)
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 2000; ++i)
    {
        FloodPacket p;
        p.relay_counter = static_cast<std::uint8_t>(rng());
        p.phase_type = kAllPhaseKinds[rng() % kPhaseKindCount];
        p.epoch_seq = static_cast<std::uint16_t>(rng());
        std::size_t n = rng() % 200;
        p.flags = NodeFlags(n);
        for (std::size_t j = 0; j < n; ++j)
            if (rng() & 1)
                p.flags.set(static_cast<NodeId>(j));
        p.payload.resize(rng() % 256);
        for (auto &b : p.payload)
            b = static_cast<std::uint8_t>(rng());
        ASSERT_EQ(decode(encode(p)), p);
    }
}

TEST(Wire, DecodeRejectsMalformedInput)
{
    EXPECT_THROW(decode(Bytes{0, 1, 0, 0}), DecodeError);
    EXPECT_THROW(decode(Bytes{0, 42, 0, 0, 0, 0}), DecodeError);     // unknown kind
    EXPECT_THROW(decode(Bytes{0, 1, 0, 0, 5, 0}), DecodeError);      // flags run past the end
    EXPECT_THROW(decode(Bytes{0, 1, 0, 0, 0, 3, 1}), DecodeError);   // short payload
    EXPECT_THROW(decode(Bytes{0, 1, 0, 0, 0, 0, 9}), DecodeError);   // trailing bytes
    FloodPacket big;
    big.payload.resize(256);
    EXPECT_THROW(encode(big), std::length_error);
}

TEST(Digest, IgnoresRelayCounterOnly)
{
    FloodPacket a;
    a.phase_type = PhaseKind::Set;
    a.epoch_seq = 9;
    a.payload = {4, 5};
    auto b = a;
    b.relay_counter = 6;
    EXPECT_EQ(payload_digest(a), payload_digest(b));
    b.payload[1] = 6;
    EXPECT_NE(payload_digest(a), payload_digest(b));
    auto c = a;
    c.epoch_seq = 10;
    EXPECT_NE(payload_digest(a), payload_digest(c));
}

TEST(ByteReader, ReadsFieldsAndDetectsTruncation)
{
    Bytes b;
    put_u16(b, 0xbeef);
    put_u32(b, 0x01020304);
    b.push_back(7);
    ByteReader r(b);
    EXPECT_EQ(r.u16(), 0xbeef);
    EXPECT_EQ(r.u32(), 0x01020304u);
    EXPECT_EQ(r.u8(), 7);
    EXPECT_THROW(r.u8(), DecodeError);
}
