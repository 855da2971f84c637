#include "atomic_sim/apb.hpp"
#include "atomic_sim/control.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace atomic_sim;

namespace
{
    std::uint64_t flood_us(const FloodConfig &c)
    {
        return c.max_slots * (c.slot.t_tx + c.slot.t_sw + c.slot.t_cal + c.slot.t_rs).count();
    }

    FloodConfig random_flood(std::mt19937_64 &rng)
    {
        FloodConfig c;
        c.max_tx = 1 + static_cast<std::uint32_t>(rng() % 4);
        c.max_slots = c.max_tx + static_cast<std::uint32_t>(rng() % 12);
        c.slot = {Micros{200 + rng() % 4000}, Micros{1 + rng() % 50}, Micros{1 + rng() % 300}, Micros{1 + rng() % 50}};
        return c;
    }

    ProtocolTiming random_timing(std::mt19937_64 &rng)
    {
        ProtocolTiming t;
        for (auto &f : t.flood)
            f = random_flood(rng);
        t.ipg = Micros{rng() % 3000};
        t.apply_aliases();
        return t;
    }

    std::vector<std::vector<std::string>> rows(const std::string &csv)
    {
        std::vector<std::vector<std::string>> out;
        std::istringstream in(csv);
        std::string line;
        while (std::getline(in, line))
        {
            std::vector<std::string> f;
            std::stringstream ls(line);
            std::string x;
            while (std::getline(ls, x, ','))
                f.push_back(x);
            out.push_back(f);
        }
        return out;
    }
}

TEST(Dissemination, OffsetsFollowGapsAndSpanMatchesBound)
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial)
    {
        auto t = random_timing(rng);
        const std::uint64_t ind = flood_us(t.of(PhaseKind::Ind)), set = flood_us(t.of(PhaseKind::Set));
        const std::uint64_t ipg = t.ipg.count();
        for (std::uint32_t n = 0; n <= 100; ++n)
        {
            auto s = build_dissemination(n, t);
            ASSERT_EQ(s.phases.size(), n + 1u);
            EXPECT_FALSE(s.repeat);
            for (std::uint32_t i = 1; i <= n; ++i)
            {
                EXPECT_EQ(s.phases[i].kind, PhaseKind::Set);
                EXPECT_EQ(static_cast<std::uint64_t>(s.phases[i].offset.count()), ind + (i - 1) * (ipg + set) + ipg);
            }
            EXPECT_EQ(static_cast<std::uint64_t>(s.worst_case_span().count()), ind + n * (ipg + set));
            EXPECT_EQ(s.worst_case_span(), configuration_bound(n, t.phase_timings()));
        }
    }
}

TEST(Dissemination, DefaultTimingExamples)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    EXPECT_EQ(build_dissemination(0, t).worst_case_span(), 11'600_us);
    EXPECT_EQ(build_dissemination(70, t).worst_case_span(), 893'600_us);
}

TEST(PairSchedules, WorstCaseSpansMatchClosedForms)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 40; ++trial)
    {
        auto t = random_timing(rng);
        const std::uint64_t ind = flood_us(t.of(PhaseKind::Ind)), ipg = t.ipg.count();
        const std::uint64_t rep = flood_us(t.of(PhaseKind::Report)), ack = flood_us(t.of(PhaseKind::Ack));
        const std::uint64_t sol = flood_us(t.of(PhaseKind::Solicit)), set = flood_us(t.of(PhaseKind::Set));
        for (std::uint32_t n = 0; n <= 100; n += 7)
        {
            auto c = build_collection(n, t);
            EXPECT_EQ(static_cast<std::uint64_t>(c.worst_case_span().count()), ind + (n + 2) * (ipg + rep + ack));
            EXPECT_EQ(c.worst_case_span(), collect_bound(n, t.phase_timings()));
            auto r = build_reaction(n, t);
            EXPECT_EQ(static_cast<std::uint64_t>(r.worst_case_span().count()), ind + (n + 2) * (ipg + sol + set));
            EXPECT_EQ(r.worst_case_span(), react_bound(n, t.phase_timings()));
            auto a = build_association(true, n, t);
            EXPECT_EQ(static_cast<std::uint64_t>(a.worst_case_span().count()),
                      ind + ipg + set + (n + 2) * (ipg + rep + ack));
        }
    }
}

TEST(PairSchedules, SharedThenDedicatedInsideTheBlock)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    auto c = build_collection(5, t);
    ASSERT_TRUE(c.repeat);
    const auto &b = *c.repeat;
    ASSERT_EQ(b.last - b.first, 2u);
    EXPECT_EQ(c.phases[b.first].kind, PhaseKind::Report);
    EXPECT_EQ(c.phases[b.first].shape, FloodShape::Shared);
    EXPECT_EQ(c.phases[b.first + 1].kind, PhaseKind::Ack);
    EXPECT_EQ(c.phases[b.first + 1].shape, FloodShape::Dedicated);
    auto r = build_reaction(5, t);
    EXPECT_EQ(r.phases[r.repeat->first].kind, PhaseKind::Solicit);
    EXPECT_EQ(r.phases[r.repeat->first + 1].kind, PhaseKind::Set);
    EXPECT_EQ(collect_bound(30, t.phase_timings()), 786'000_us);
}

TEST(PairSchedules, SafetyCap)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    EXPECT_EQ(build_collection(0, t).max_repeats, 8u);
    EXPECT_EQ(build_collection(10, t).max_repeats, 48u);
    EXPECT_EQ(build_collection(10, t, 1, 0).max_repeats, 12u); // never below the worst case
    EXPECT_EQ(build_collection(10, t).expected_repeats, 12u);
}

TEST(DumpSchedule, RowsAreOrderedAndNonOverlapping)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial)
    {
        auto t = random_timing(rng);
        for (std::uint32_t n : {0u, 1u, 9u})
            for (const auto &s : {build_dissemination(n, t), build_collection(n, t), build_reaction(n, t),
                                  build_association(true, n, t)})
            {
                auto r = rows(dump_schedule(s));
                ASSERT_EQ(r[0], (std::vector<std::string>{"phase_index", "kind", "offset_us", "duration_us", "flood"}));
                std::size_t expected = 1 + (s.repeat ? s.repeat->first + 2 * s.expected_repeats : s.phases.size());
                ASSERT_EQ(r.size(), expected);
                std::uint64_t end = 0;
                for (std::size_t i = 1; i < r.size(); ++i)
                {
                    EXPECT_EQ(std::stoul(r[i][0]), i - 1);
                    auto off = std::stoull(r[i][2]), dur = std::stoull(r[i][3]);
                    // One gap per pair: the dedicated reply follows its shared phase directly.
                    const bool reply = r[i][4] == "dedicated" && i > 1 && r[i - 1][4] == "shared";
                    if (i > 1)
                        EXPECT_EQ(off, end + (reply ? 0 : t.ipg.count()));
                    end = off + dur;
                }
                EXPECT_EQ(end, static_cast<std::uint64_t>(s.worst_case_span().count()));
            }
    }
}

TEST(DumpSchedule, ExplicitRepeatCount)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    auto r = rows(dump_schedule(build_collection(3, t), 1));
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[1][1], "IND");
    EXPECT_EQ(r[2][1], "REPORT");
    EXPECT_EQ(r[2][4], "shared");
    EXPECT_EQ(r[3][1], "ACK");
    EXPECT_EQ(r[3][2], std::to_string(11'600 + 1000 + 11'600));
    EXPECT_EQ(r[2][2], std::to_string(11'600 + 1000));
}

namespace
{
    // Engine harness: node 1 reports in shared phases until `productive` pairs have passed.
    struct FakeCtx
    {
        std::size_t n = 3;
        std::uint32_t productive = 0;
        std::vector<PhaseInstance> seen;
        std::size_t node_count() const { return n; }
        NodeId controller() const { return 0; }
        FloodOutcome run_phase(const PhaseInstance &inst, std::span<const FloodParticipant> parts)
        {
            seen.push_back(inst);
            FloodOutcome o;
            o.nodes.resize(n);
            bool initiated = false;
            for (const auto &p : parts)
                initiated |= p.role == FloodRole::Initiator;
            o.nodes[0].success = initiated && inst.phase.shape == FloodShape::Shared;
            return o;
        }
    };

    FloodParticipant node_pre(FakeCtx &c, const PhaseInstance &inst, NodeId id)
    {
        if (id == 1 && inst.iteration < c.productive)
        {
            FloodPacket p;
            p.phase_type = inst.phase.kind;
            return {FloodRole::Initiator, p, Nanos{0}, std::nullopt};
        }
        return {FloodRole::Forwarder, std::nullopt, Nanos{0}, std::nullopt};
    }

    FloodParticipant ctrl_pre(FakeCtx &, const PhaseInstance &, NodeId)
    {
        return {FloodRole::Destination, std::nullopt, Nanos{0}, std::nullopt};
    }

    HookTable<FakeCtx> fake_hooks()
    {
        HookTable<FakeCtx> h{};
        for (auto &k : h)
        {
            k[0].pre = ctrl_pre;
            k[1].pre = node_pre;
        }
        return h;
    }
}

TEST(ExecuteSchedule, StopsAfterTwoEmptyPairs)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    for (std::uint32_t k = 0; k < 10; ++k)
    {
        FakeCtx ctx;
        ctx.productive = k;
        auto s = build_collection(k, t);
        auto r = execute_schedule(s, Micros{1'000'000}, ctx, fake_hooks());
        EXPECT_EQ(r.repeats, k + 2);
        EXPECT_FALSE(r.capped);
        EXPECT_EQ(r.span, s.worst_case_span());
        EXPECT_EQ(r.count(PhaseKind::Report), k + 2);
        for (std::size_t i = 1; i < ctx.seen.size(); ++i)
            EXPECT_GE(ctx.seen[i].start, ctx.seen[i - 1].start + ctx.seen[i - 1].phase.duration());
    }
}

TEST(ExecuteSchedule, CapEndsAnOpportunityThatNeverQuietens)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    FakeCtx ctx;
    ctx.productive = 1000;
    auto s = build_collection(2, t);
    auto r = execute_schedule(s, Micros{0}, ctx, fake_hooks());
    EXPECT_TRUE(r.capped);
    EXPECT_EQ(r.repeats, s.max_repeats);
    EXPECT_EQ(r.span, s.span(s.max_repeats));
}

TEST(ExecuteSchedule, SkippedPrologueIsRecordedNotRun)
{
    auto t = ProtocolTiming::uniform(FloodConfig{});
    FakeCtx ctx;
    auto s = build_dissemination(3, t);
    auto r = execute_schedule(s, Micros{0}, ctx, fake_hooks(), 1);
    EXPECT_EQ(ctx.seen.size(), 3u);
    EXPECT_EQ(r.phases.size(), 4u);
    EXPECT_EQ(r.span, s.worst_case_span());
}

namespace
{
    WorldConfig ideal_config(std::uint64_t seed = 1)
    {
        WorldConfig c;
        c.seed = seed;
        c.capture.ideal_contention = true;
        c.react_workload = ReactWorkload::None;
        c.rotation = {OpportunityKind::Collect};
        return c;
    }
}

TEST(CollectOpportunity, SinglePendingNodeTakesThreePairs)
{
    World w(line_topology(2), ideal_config());
    auto e = w.run_opportunity(OpportunityKind::Collect);
    const auto &r = e.record;
    EXPECT_EQ(r.kind, OpportunityKind::Collect);
    EXPECT_EQ(r.n_participants, 1u);
    EXPECT_TRUE(r.complete);
    EXPECT_EQ(r.count(PhaseKind::Report), 3u);
    EXPECT_EQ(r.count(PhaseKind::Ack), 1u);
    EXPECT_EQ(r.count(PhaseKind::Nack), 2u);
    EXPECT_EQ(r.span, collect_bound(1, w.config().timing.phase_timings()));
    EXPECT_EQ(w.metrics()[1].completed, 1u);
    EXPECT_EQ(w.metrics()[1].failed, 0u);
}

TEST(CollectOpportunity, LosslessGridSpanEqualsBound)
{
    auto topo = grid_topology(21, 300.0);
    topo.set_all_prr(1.0);
    World w(std::move(topo), ideal_config());
    auto e = w.run_opportunity(OpportunityKind::Collect);
    EXPECT_EQ(e.record.n_participants, 20u);
    EXPECT_TRUE(e.record.complete);
    EXPECT_EQ(e.record.span, collect_bound(20, w.config().timing.phase_timings()));
    for (NodeId i = 0; i < 21; ++i)
        if (i != w.controller_id())
            EXPECT_EQ(w.metrics()[i].completed, 1u) << i;
}

TEST(CollectOpportunity, LostAcknowledgementTriggersAnotherReport)
{
    bool saw_retry = false;
    for (std::uint64_t seed = 1; seed <= 30; ++seed)
    {
        auto cfg = ideal_config(seed);
        cfg.drop_probability = 0.5;
        World w(line_topology(3), cfg);
        auto e = w.run_opportunity(OpportunityKind::Collect);
        const auto &r = e.record;
        if (!r.complete)
            continue;
        // Every completed exchange got an ACK; extra productive reports are retransmissions.
        std::size_t productive = 0;
        for (const auto &p : r.phases)
            productive += p.productive;
        std::uint64_t done = w.metrics()[1].completed + w.metrics()[2].completed;
        EXPECT_GE(productive, done);
        saw_retry |= productive > done;
        EXPECT_EQ(r.span, w.config().timing.phase_timings().t_ind +
                              r.pairs * (w.config().timing.ipg + 2 * flood_duration(FloodConfig{})));
    }
    EXPECT_TRUE(saw_retry);
}

TEST(ReactOpportunity, ServedNodeStopsSoliciting)
{
    auto cfg = ideal_config();
    cfg.rotation = {OpportunityKind::React};
    auto topo = grid_topology(10, 300.0);
    topo.set_all_prr(1.0);
    World w(std::move(topo), cfg);
    std::vector<NodeId> asked;
    for (NodeId i = 0; i < 10 && asked.size() < 4; ++i)
        if (i != w.controller_id())
        {
            w.node_react(i);
            asked.push_back(i);
        }
    auto e = w.run_opportunity(OpportunityKind::React);
    EXPECT_EQ(e.record.count(PhaseKind::Solicit), 6u);
    EXPECT_EQ(e.record.count(PhaseKind::Set), 4u);
    EXPECT_EQ(e.record.span, react_bound(4, w.config().timing.phase_timings()));
    for (auto id : asked)
    {
        EXPECT_EQ(w.metrics()[id].completed, 1u);
        EXPECT_FALSE(w.node(id).pending);
    }
}
