#include "atomic_sim/flood.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace atomic_sim;

namespace
{
    FloodPacket pkt(PhaseKind k = PhaseKind::Set, std::uint8_t tag = 1)
    {
        FloodPacket p;
        p.phase_type = k;
        p.payload = {tag};
        return p;
    }

    Medium lossless(const Topology &t, CaptureModel cm = {})
    {
        return Medium(t, cm, RandomStream(1), LossInjector{0.0, RandomStream(2)});
    }

    HopSequence hop() { return hop_sequence(3, std::vector<Channel>{0, 1, 2, 3, 4}, std::vector<Channel>{2, 3}, 16); }

    std::vector<FloodParticipant> single_source(std::size_t n, NodeId src)
    {
        std::vector<FloodParticipant> v(n);
        for (NodeId i = 0; i < n; ++i)
            v[i].role = FloodRole::Forwarder;
        v[src] = {FloodRole::Initiator, pkt(), Nanos{0}, std::nullopt};
        return v;
    }

    SlotTiming slot1234() { return {1000_us, 22_us, 192_us, 20_us}; }
}

TEST(RunFlood, FourNodeLineMatchesBackToBackSchedule)
{
    auto t = line_topology(4);
    auto m = lossless(t);
    FloodConfig cfg{6, 2, slot1234()};
    Trace trace(true);
    auto out = run_flood(cfg, single_source(4, 0), hop(), m, {Micros{0}, 500_us, PhaseKind::Set, 0, &trace});
    EXPECT_EQ(out.nodes[0].tx_count, 2u);
    EXPECT_FALSE(out.nodes[0].first_rx_slot);
    EXPECT_EQ(*out.nodes[1].first_rx_slot, 0u);
    EXPECT_EQ(*out.nodes[2].first_rx_slot, 1u);
    EXPECT_EQ(*out.nodes[3].first_rx_slot, 2u);
    for (NodeId i = 1; i < 4; ++i)
        EXPECT_TRUE(out.nodes[i].success);
    EXPECT_LE(out.duration, 6 * slot_length(cfg.slot));

    // TX lines per node, in slot order.
    std::map<int, std::vector<int>> tx_slots;
    std::istringstream in(trace.text());
    std::string line;
    while (std::getline(in, line))
    {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string x;
        while (std::getline(ls, x, ','))
            f.push_back(x);
        ASSERT_EQ(f.size(), 6u);
        if (f[2] == "TX")
            tx_slots[std::stoi(f[1])].push_back(std::stoi(f[3]));
    }
    EXPECT_EQ(tx_slots[0], (std::vector<int>{0, 1}));
    EXPECT_EQ(tx_slots[1], (std::vector<int>{1, 2}));
    EXPECT_EQ(tx_slots[2], (std::vector<int>{2, 3}));
    EXPECT_EQ(tx_slots[3], (std::vector<int>{3, 4}));
}

TEST(RunFlood, SingleNodeInitiatorOnly)
{
    auto t = line_topology(1);
    auto m = lossless(t);
    FloodConfig cfg{5, 3, slot1234()};
    auto out = run_flood(cfg, single_source(1, 0), hop(), m, {});
    EXPECT_EQ(out.duration, 3 * 1234_us);
    EXPECT_EQ(out.nodes[0].tx_count, 3u);
}

TEST(RunFlood, BrokenLinkStopsPropagation)
{
    auto t = line_topology(4);
    t.set_symmetric_link(1, 2, -70.0, 0.0);
    auto m = lossless(t);
    auto out = run_flood(FloodConfig{6, 2, slot1234()}, single_source(4, 0), hop(), m, {});
    EXPECT_TRUE(out.nodes[1].success);
    EXPECT_FALSE(out.nodes[2].success);
    EXPECT_FALSE(out.nodes[3].success);
    auto d = oracle::bfs(t, 0);
    EXPECT_EQ(d[2], -1);
    EXPECT_EQ(d[3], -1);
}

TEST(RunFlood, ConfigurationErrors)
{
    auto t = line_topology(3);
    auto m = lossless(t);
    std::vector<FloodParticipant> none(3, FloodParticipant{FloodRole::Forwarder});
    EXPECT_THROW(run_flood(FloodConfig{}, none, hop(), m, {}), ConfigError);
    std::vector<FloodParticipant> short_list(2);
    EXPECT_THROW(run_flood(FloodConfig{}, short_list, hop(), m, {}), ConfigError);
    auto no_packet = single_source(3, 0);
    no_packet[0].packet.reset();
    EXPECT_THROW(run_flood(FloodConfig{}, no_packet, hop(), m, {}), ConfigError);
    EXPECT_THROW(run_flood(FloodConfig{2, 3, {}}, single_source(3, 0), hop(), m, {}), ConfigError);
}

TEST(RunFlood, FirstReceptionTracksHopDistanceOnRandomGraphs)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 60; ++trial)
    {
        std::size_t n = 2 + rng() % 30;
        std::vector<NodePosition> pos;
        for (NodeId i = 0; i < n; ++i)
            pos.push_back({i, 0, 0});
        Topology t(pos);
        for (NodeId i = 1; i < n; ++i) // random tree plus chords keeps it connected
            t.set_symmetric_link(static_cast<NodeId>(rng() % i), i, -70.0 - static_cast<double>(rng() % 20), 1.0);
        for (int c = 0; c < static_cast<int>(n) / 3; ++c)
        {
            NodeId a = static_cast<NodeId>(rng() % n), b = static_cast<NodeId>(rng() % n);
            if (a != b)
                t.set_symmetric_link(a, b, -75.0, 1.0);
        }
        NodeId src = static_cast<NodeId>(rng() % n);
        auto d = oracle::bfs(t, src);
        int depth = *std::max_element(d.begin(), d.end());
        std::uint32_t max_tx = 1 + static_cast<std::uint32_t>(rng() % 4);
        FloodConfig cfg{static_cast<std::uint32_t>(depth) + max_tx, max_tx, slot1234()};
        auto m = lossless(t);
        auto out = run_flood(cfg, single_source(n, src), hop(), m, {});
        for (NodeId i = 0; i < n; ++i)
        {
            if (i == src)
                continue;
            ASSERT_TRUE(out.nodes[i].success);
            EXPECT_EQ(static_cast<int>(*out.nodes[i].first_rx_slot), d[i] - 1);
            EXPECT_EQ(out.nodes[i].packet.relay_counter, *out.nodes[i].first_rx_slot);
        }
    }
}

TEST(RunFlood, TransmissionRulesHold)
{
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 40; ++trial)
    {
        auto t = grid_topology(4 + rng() % 30, 300.0);
        t.set_all_prr(0.5 + 0.5 * static_cast<double>(rng() % 2));
        FloodConfig cfg{3 + static_cast<std::uint32_t>(rng() % 8), 1 + static_cast<std::uint32_t>(rng() % 3), slot1234()};
        if (cfg.max_slots < cfg.max_tx)
            cfg.max_slots = cfg.max_tx;
        Medium m(t, CaptureModel{}, RandomStream(trial), LossInjector{0.1, RandomStream(trial + 100)});
        NodeId src = static_cast<NodeId>(rng() % t.size());
        Trace trace(true);
        auto parts = single_source(t.size(), src);
        auto out = run_flood(cfg, parts, hop(), m, {Micros{10'000}, 500_us, PhaseKind::Ind, 0, &trace});
        EXPECT_LE(out.duration, flood_duration(cfg));
        std::map<int, int> first_rx, tx_count, last_slot;
        std::istringstream in(trace.text());
        std::string line;
        while (std::getline(in, line))
        {
            std::stringstream ls(line);
            std::string time, node, ev, slot, ch, phase;
            std::getline(ls, time, ',');
            std::getline(ls, node, ',');
            std::getline(ls, ev, ',');
            std::getline(ls, slot, ',');
            int nd = std::stoi(node), s = std::stoi(slot);
            EXPECT_LT(s, static_cast<int>(cfg.max_slots));
            if (ev == "RX" && !first_rx.contains(nd))
                first_rx[nd] = s;
            if (ev == "TX")
            {
                ++tx_count[nd];
                if (nd != src)
                {
                    ASSERT_TRUE(first_rx.contains(nd)) << "node transmitted before receiving";
                    EXPECT_GT(s, first_rx[nd]);
                }
            }
        }
        for (auto [nd, c] : tx_count)
            EXPECT_LE(static_cast<std::uint32_t>(c), cfg.max_tx);
        bool someone_listens_to_end = false;
        for (NodeId i = 0; i < t.size(); ++i)
            if (i != src && !out.nodes[i].success)
                someone_listens_to_end = true;
        if (someone_listens_to_end)
            EXPECT_EQ(out.duration, flood_duration(cfg));
    }
}

TEST(RunFlood, RadioWindowsSumToRadioOn)
{
    auto t = grid_topology(20, 300.0);
    t.set_all_prr(1.0);
    auto m = lossless(t);
    FloodConfig cfg;
    auto parts = single_source(t.size(), t.controller());
    parts[3].role = FloodRole::Sleeper;
    auto out = run_flood(cfg, parts, hop(), m, {Micros{5000}, 500_us});
    std::vector<Micros> sum(t.size(), Micros{0});
    for (const auto &w : out.windows)
        sum[w.node] += w.end - w.begin;
    for (NodeId i = 0; i < t.size(); ++i)
        EXPECT_EQ(sum[i], out.nodes[i].radio_on);
    EXPECT_EQ(out.nodes[3].radio_on, 0_us);
    // Early radio-off: nearer nodes spend less time in the flood.
    auto hops = t.hop_distances(t.controller());
    for (NodeId a = 0; a < t.size(); ++a)
        for (NodeId b = 0; b < t.size(); ++b)
            if (a != t.controller() && b != t.controller() && a != 3 && b != 3 && *hops[a] < *hops[b])
                EXPECT_LT(out.nodes[a].radio_on, out.nodes[b].radio_on);
}

TEST(RunFlood, SharedFloodWithIdealContentionDeliversOneSource)
{
    auto t = grid_topology(16, 300.0);
    t.set_all_prr(1.0);
    CaptureModel cm;
    cm.ideal_contention = true;
    auto m = lossless(t, cm);
    std::vector<FloodParticipant> parts(t.size(), FloodParticipant{FloodRole::Forwarder});
    auto ctrl = t.controller();
    std::vector<NodeId> sources;
    for (NodeId s : {0, 5, 10, 15})
        if (s != ctrl && sources.size() < 3)
            sources.push_back(s);
    for (NodeId s : sources)
        parts[s] = {FloodRole::Initiator, pkt(PhaseKind::Report, static_cast<std::uint8_t>(s)), Nanos{0}, std::nullopt};
    auto out = run_flood(FloodConfig{}, parts, hop(), m, {Micros{0}, 500_us, PhaseKind::Report, 99});
    ASSERT_TRUE(out.nodes[ctrl].success);
    EXPECT_NE(std::find(sources.begin(), sources.end(), out.nodes[ctrl].origin), sources.end());
    EXPECT_EQ(out.nodes[ctrl].packet.payload[0], out.nodes[ctrl].origin);
}

TEST(RunFlood, Deterministic)
{
    auto t = grid_topology(25, 300.0);
    auto go = [&] {
        Medium m(t, CaptureModel{}, RandomStream(9), LossInjector{0.2, RandomStream(10)});
        Trace tr(true);
        auto out = run_flood(FloodConfig{}, single_source(t.size(), 12), hop(), m, {Micros{0}, 500_us, PhaseKind::Ind, 0, &tr});
        return std::pair{out.duration, tr.text()};
    };
    EXPECT_EQ(go(), go());
}

TEST(IdleListen, ListenersPayForTheWholeFlood)
{
    std::vector<FloodParticipant> parts(3, FloodParticipant{FloodRole::Forwarder});
    parts[2].role = FloodRole::Sleeper;
    FloodConfig cfg;
    auto out = idle_listen(cfg, parts, {Micros{1000}, 500_us});
    EXPECT_EQ(out.nodes[0].radio_on, flood_duration(cfg) + 500_us);
    EXPECT_EQ(out.nodes[2].radio_on, 0_us);
    EXPECT_FALSE(out.nodes[0].success);
    parts[1] = {FloodRole::Initiator, pkt(), Nanos{0}, std::nullopt};
    EXPECT_THROW(idle_listen(cfg, parts, {}), ConfigError);
}

TEST(Synchronize, Examples)
{
    EXPECT_EQ(synchronize(5000_us, 0, 1234_us), 5000_us);
    EXPECT_EQ(synchronize(8702_us, 3, 1234_us), 5000_us);
}

TEST(Synchronize, DriftedClockRealignsAfterOneReception)
{
    // Flood reference at t=1 s; the node's clock runs 40 ppm fast, so after one 1 s epoch
    // it believes the reception happened 40 us later than it did.
    const Micros reference{1'000'000};
    const Micros slot = 1450_us;
    const std::uint32_t rc = 2;
    const Micros true_rx = reference + rc * slot;
    const Micros local_rx = true_rx + 40_us;
    const Micros local_ref = synchronize(local_rx, rc, slot);
    const Micros offset = local_ref - reference; // node's clock error
    EXPECT_EQ(offset, 40_us);
    EXPECT_EQ(synchronize(local_rx - offset, rc, slot), reference);
}

TEST(HopSequence, DeterministicAndAssociationSlots)
{
    std::vector<Channel> pool{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    std::vector<Channel> assoc{2, 3};
    auto a = hop_sequence(17, pool, assoc, 64);
    auto b = hop_sequence(17, pool, assoc, 64);
    EXPECT_EQ(a.channels, b.channels);
    EXPECT_NE(a.channels, hop_sequence(18, pool, assoc, 64).channels);
    for (std::size_t i = 1; i < a.channels.size(); i += 2)
        EXPECT_TRUE(a.channels[i] == 2 || a.channels[i] == 3);
    EXPECT_EQ(a.at(65), a.channels[1]);
}

TEST(HopSequence, EvenSlotsUniformOverPool)
{
    std::vector<Channel> pool(16);
    for (Channel c = 0; c < 16; ++c)
        pool[c] = c;
    std::vector<Channel> assoc{2, 3};
    auto h = hop_sequence(1, pool, assoc, 2000);
    std::vector<int> counts(16, 0);
    int draws = 0;
    for (std::size_t i = 0; i < h.channels.size(); i += 2, ++draws)
        ++counts[h.channels[i]];
    const double p = 1.0 / 16.0, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    double chi2 = 0.0;
    for (int c : counts)
    {
        EXPECT_LE(std::abs(c - mean), 3 * sigma) << "channel count " << c;
        chi2 += (c - mean) * (c - mean) / mean;
    }
    EXPECT_LT(chi2, 37.7); // chi-square, 15 dof, p = 0.001
}

TEST(HopSequence, Errors)
{
    std::vector<Channel> pool{0, 1, 2, 3}, assoc{2, 3}, none{}, outside{9};
    EXPECT_THROW(hop_sequence(0, none, assoc, 8), ConfigError);
    EXPECT_THROW(hop_sequence(0, pool, none, 8), ConfigError);
    EXPECT_THROW(hop_sequence(0, pool, assoc, 1), ConfigError);
    EXPECT_THROW(hop_sequence(0, pool, outside, 8), ConfigError);
}
