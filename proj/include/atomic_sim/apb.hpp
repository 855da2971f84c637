#pragma once

// Protocol builder: typed phases built on flood primitives, chained into opportunity
// schedules, and a generic executor driven by per-(phase kind, station) hooks.

#include "atomic_sim/flood.hpp"
#include "atomic_sim/packet.hpp"
#include "atomic_sim/timing.hpp"

#include <algorithm>
#include <array>
#include <concepts>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace atomic_sim
{
    enum class FloodShape : std::uint8_t
    {
        Dedicated,
        Shared,
    };

    inline constexpr std::string_view to_string(FloodShape s) noexcept
    {
        return s == FloodShape::Shared ? "shared" : "dedicated";
    }

    inline constexpr std::size_t index_of(PhaseKind k) noexcept { return static_cast<std::size_t>(k); }

    /// Flood configuration per phase kind plus the inter-phase gap and receiver guard.
    struct ProtocolTiming
    {
        std::array<FloodConfig, kPhaseKindCount> flood{};
        Micros ipg{1000};
        Micros guard{500};

        const FloodConfig &of(PhaseKind k) const noexcept { return flood[index_of(k)]; }
        FloodConfig &of(PhaseKind k) noexcept { return flood[index_of(k)]; }

        static ProtocolTiming uniform(const FloodConfig &c, Micros ipg = Micros{1000}, Micros guard = Micros{500})
        {
            ProtocolTiming t;
            t.flood.fill(c);
            t.ipg = ipg;
            t.guard = guard;
            return t;
        }

        /// BOOT and ALERT have no timing of their own: they reuse the SET and REPORT shapes.
        void apply_aliases() noexcept
        {
            of(PhaseKind::Boot) = of(PhaseKind::Set);
            of(PhaseKind::Alert) = of(PhaseKind::Report);
        }

        PhaseTimings phase_timings() const noexcept
        {
            return {flood_duration(of(PhaseKind::Ind)), flood_duration(of(PhaseKind::Set)),
                    flood_duration(of(PhaseKind::Report)), flood_duration(of(PhaseKind::Ack)),
                    flood_duration(of(PhaseKind::Solicit)), ipg};
        }

        void validate() const
        {
            for (const auto &f : flood)
                f.validate();
        }
    };

    struct Phase
    {
        PhaseKind kind = PhaseKind::Ind;
        FloodShape shape = FloodShape::Dedicated;
        FloodConfig flood{};
        Micros offset{0}; // from the opportunity reference; inside a repeat block, from the block iteration start
        Micros guard{500};

        Micros duration() const noexcept { return flood_duration(flood); }
    };

    struct RepeatBlock
    {
        std::size_t first = 0; // index into PhaseSchedule::phases
        std::size_t last = 0;  // one past the end
        Micros period{0};      // length of one iteration including its leading gap
    };

    struct PhaseSchedule
    {
        std::vector<Phase> phases;
        std::optional<RepeatBlock> repeat;
        Micros prologue_end{0};
        std::uint32_t stop_after_empty = 2;  // consecutive empty shared phases that end the opportunity
        std::uint32_t max_repeats = 0;       // safety cap on block iterations
        std::uint32_t expected_repeats = 0;  // worst-case iterations (pending + stop overhead)

        /// Span when the repeat block runs `repeats` times.
        Micros span(std::uint32_t repeats) const noexcept
        {
            if (!repeat)
                return prologue_end;
            return prologue_end + repeats * repeat->period;
        }

        Micros worst_case_span() const noexcept { return span(expected_repeats); }
    };

    namespace detail
    {
        inline Phase make_phase(PhaseKind k, FloodShape shape, const ProtocolTiming &t, Micros offset)
        {
            return {k, shape, t.of(k), offset, t.guard};
        }

        inline PhaseSchedule pair_schedule(std::span<const PhaseKind> prologue_extra, PhaseKind shared_kind,
                                           PhaseKind reply_kind, std::uint32_t pending, const ProtocolTiming &t,
                                           std::uint32_t cap_factor, std::uint32_t cap_slack)
        {
            PhaseSchedule s;
            s.phases.push_back(make_phase(PhaseKind::Ind, FloodShape::Dedicated, t, Micros{0}));
            Micros cursor = s.phases.back().duration();
            for (auto k : prologue_extra)
            {
                s.phases.push_back(make_phase(k, FloodShape::Dedicated, t, cursor + t.ipg));
                cursor = s.phases.back().offset + s.phases.back().duration();
            }
            s.prologue_end = cursor;
            RepeatBlock b;
            b.first = s.phases.size();
            auto shared = make_phase(shared_kind, FloodShape::Shared, t, t.ipg);
            auto reply = make_phase(reply_kind, FloodShape::Dedicated, t, t.ipg + shared.duration());
            b.period = t.ipg + shared.duration() + reply.duration();
            s.phases.push_back(shared);
            s.phases.push_back(reply);
            b.last = s.phases.size();
            s.repeat = b;
            s.expected_repeats = pending + s.stop_after_empty;
            s.max_repeats = cap_factor * pending + cap_slack;
            if (s.max_repeats < s.expected_repeats)
                s.max_repeats = s.expected_repeats;
            return s;
        }
    }

    inline constexpr std::uint32_t kDefaultCapFactor = 4;
    inline constexpr std::uint32_t kDefaultCapSlack = 8;

    /// IND followed by `n_targets` SET phases, each preceded by the inter-phase gap.
    inline PhaseSchedule build_dissemination(std::uint32_t n_targets, const ProtocolTiming &t,
                                             PhaseKind payload_kind = PhaseKind::Set)
    {
        PhaseSchedule s;
        s.phases.push_back(detail::make_phase(PhaseKind::Ind, FloodShape::Dedicated, t, Micros{0}));
        Micros cursor = s.phases.back().duration();
        for (std::uint32_t i = 0; i < n_targets; ++i)
        {
            s.phases.push_back(detail::make_phase(payload_kind, FloodShape::Dedicated, t, cursor + t.ipg));
            cursor = s.phases.back().offset + s.phases.back().duration();
        }
        s.prologue_end = cursor;
        return s;
    }

    /// IND then repeated (REPORT shared, ACK dedicated) pairs until two consecutive empty reports.
    inline PhaseSchedule build_collection(std::uint32_t pending, const ProtocolTiming &t,
                                          std::uint32_t cap_factor = kDefaultCapFactor,
                                          std::uint32_t cap_slack = kDefaultCapSlack)
    {
        return detail::pair_schedule({}, PhaseKind::Report, PhaseKind::Ack, pending, t, cap_factor, cap_slack);
    }

    /// IND then repeated (SOLICIT shared, SET dedicated) pairs.
    inline PhaseSchedule build_reaction(std::uint32_t pending, const ProtocolTiming &t,
                                        std::uint32_t cap_factor = kDefaultCapFactor,
                                        std::uint32_t cap_slack = kDefaultCapSlack)
    {
        return detail::pair_schedule({}, PhaseKind::Solicit, PhaseKind::Set, pending, t, cap_factor, cap_slack);
    }

    /// Association: IND, an optional BOOT for freshly registered nodes, then a collection
    /// block in which unregistered nodes report themselves.
    inline PhaseSchedule build_association(bool with_boot, std::uint32_t pending, const ProtocolTiming &t,
                                           std::uint32_t cap_factor = kDefaultCapFactor,
                                           std::uint32_t cap_slack = kDefaultCapSlack)
    {
        std::vector<PhaseKind> extra;
        if (with_boot)
            extra.push_back(PhaseKind::Boot);
        return detail::pair_schedule(extra, PhaseKind::Report, PhaseKind::Ack, pending, t, cap_factor, cap_slack);
    }

    /// phase_index,kind,offset_us,duration_us,flood; repeat blocks expanded `repeats` times
    /// (default: worst case).
    inline std::string dump_schedule(const PhaseSchedule &s, std::optional<std::uint32_t> repeats = std::nullopt)
    {
        std::string out = "phase_index,kind,offset_us,duration_us,flood\n";
        std::size_t idx = 0;
        auto emit = [&](const Phase &p, Micros offset) {
            out += std::to_string(idx++) + ',' + std::string(to_string(p.kind)) + ',' +
                   std::to_string(offset.count()) + ',' + std::to_string(p.duration().count()) + ',' +
                   std::string(to_string(p.shape)) + '\n';
        };
        std::size_t prologue = s.repeat ? s.repeat->first : s.phases.size();
        for (std::size_t i = 0; i < prologue; ++i)
            emit(s.phases[i], s.phases[i].offset);
        if (s.repeat)
        {
            auto n = repeats.value_or(s.expected_repeats);
            for (std::uint32_t r = 0; r < n; ++r)
                for (std::size_t i = s.repeat->first; i < s.repeat->last; ++i)
                    emit(s.phases[i], s.prologue_end + r * s.repeat->period + s.phases[i].offset);
        }
        return out;
    }

    // ---------------------------------------------------------------------------------------
    // Execution

    enum class Station : std::uint8_t
    {
        Controller = 0,
        Node = 1,
    };

    struct PhaseInstance
    {
        std::size_t schedule_index = 0;
        std::uint32_t iteration = 0; // repeat-block iteration, 0 for prologue phases
        bool in_repeat = false;
        Phase phase{};
        Micros start{0}; // absolute
    };

    template <class Ctx>
    struct PhaseHooks
    {
        using Pre = FloodParticipant (*)(Ctx &, const PhaseInstance &, NodeId);
        using Post = void (*)(Ctx &, const PhaseInstance &, NodeId, const NodeFloodResult &);
        Pre pre = nullptr;
        Post post = nullptr;
    };

    /// Dispatch table indexed by [phase kind][station].
    template <class Ctx>
    using HookTable = std::array<std::array<PhaseHooks<Ctx>, 2>, kPhaseKindCount>;

    template <class Ctx>
    concept OpportunityContext = requires(Ctx &c, const PhaseInstance &p, std::span<const FloodParticipant> parts,
                                          const FloodOutcome &o) {
        { c.node_count() } -> std::convertible_to<std::size_t>;
        { c.controller() } -> std::convertible_to<NodeId>;
        { c.run_phase(p, parts) } -> std::same_as<FloodOutcome>;
    };

    struct PhaseRecord
    {
        PhaseKind kind = PhaseKind::Ind; // kind actually flooded (ACK slots may carry NACK)
        FloodShape shape = FloodShape::Dedicated;
        Micros start{0};
        Micros duration{0};
        std::uint32_t iteration = 0;
        bool productive = false; // shared phases: the controller received a packet
    };

    struct OpportunityResult
    {
        Micros start{0};
        Micros span{0};
        std::uint32_t repeats = 0;
        bool capped = false;
        std::vector<PhaseRecord> phases;

        std::size_t count(PhaseKind k) const
        {
            std::size_t c = 0;
            for (const auto &p : phases)
                c += p.kind == k;
            return c;
        }
    };

    /// Runs every phase at its offset, applies post logic and honours the stop rule.
    /// `run_prologue_from` lets the caller skip phases it already executed (the IND).
    template <OpportunityContext Ctx>
    OpportunityResult execute_schedule(const PhaseSchedule &schedule, Micros start, Ctx &ctx,
                                       const HookTable<Ctx> &hooks, std::size_t run_prologue_from = 0)
    {
        OpportunityResult result;
        result.start = start;
        const NodeId controller = ctx.controller();
        const std::size_t n = ctx.node_count();
        std::vector<FloodParticipant> parts(n);

        auto run_one = [&](const PhaseInstance &inst) -> bool {
            const auto k = index_of(inst.phase.kind);
            for (NodeId i = 0; i < n; ++i)
            {
                const auto station = i == controller ? Station::Controller : Station::Node;
                auto pre = hooks[k][static_cast<std::size_t>(station)].pre;
                parts[i] = pre ? pre(ctx, inst, i) : FloodParticipant{};
            }
            PhaseKind flooded = inst.phase.kind;
            for (const auto &p : parts)
                if (p.role == FloodRole::Initiator && p.packet)
                {
                    flooded = p.packet->phase_type;
                    break;
                }
            // Phases nobody initiates still cost listeners a full flood; the context decides how
            // to account for that (see idle_listen).
            FloodOutcome out = ctx.run_phase(inst, std::span<const FloodParticipant>(parts));
            for (NodeId i = 0; i < n; ++i)
            {
                const auto station = i == controller ? Station::Controller : Station::Node;
                auto post = hooks[k][static_cast<std::size_t>(station)].post;
                if (post && parts[i].role != FloodRole::Sleeper)
                    post(ctx, inst, i, out.nodes[i]);
            }
            bool productive = inst.phase.shape == FloodShape::Shared && out.nodes[controller].success;
            result.phases.push_back(
                {flooded, inst.phase.shape, inst.start, inst.phase.duration(), inst.iteration, productive});
            result.span = inst.start + inst.phase.duration() - start;
            return productive;
        };

        const std::size_t prologue = schedule.repeat ? schedule.repeat->first : schedule.phases.size();
        for (std::size_t i = 0; i < prologue; ++i)
        {
            const auto &p = schedule.phases[i];
            if (i < run_prologue_from)
            {
                result.phases.push_back({p.kind, p.shape, start + p.offset, p.duration(), 0, false});
                result.span = p.offset + p.duration();
                continue;
            }
            run_one({i, 0, false, p, start + p.offset});
        }
        if (!schedule.repeat)
            return result;

        const auto &block = *schedule.repeat;
        std::uint32_t empty_run = 0;
        std::uint32_t it = 0;
        for (; it < schedule.max_repeats && empty_run < schedule.stop_after_empty; ++it)
        {
            Micros base = start + schedule.prologue_end + it * block.period;
            bool block_productive = false;
            for (std::size_t i = block.first; i < block.last; ++i)
            {
                const auto &p = schedule.phases[i];
                block_productive |= run_one({i, it, true, p, base + p.offset});
            }
            empty_run = block_productive ? 0 : empty_run + 1;
        }
        result.repeats = it;
        result.capped = empty_run < schedule.stop_after_empty;
        return result;
    }
}
