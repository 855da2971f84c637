#pragma once

// SDN control plane: controller and node state, IND/REPORT/SOLICIT/SET payloads, epoch
// scheduling and the simulated world that runs opportunities over the medium.

#include "atomic_sim/apb.hpp"
#include "atomic_sim/flood.hpp"
#include "atomic_sim/medium.hpp"
#include "atomic_sim/packet.hpp"
#include "atomic_sim/rng.hpp"
#include "atomic_sim/timing.hpp"
#include "atomic_sim/topology.hpp"
#include "atomic_sim/trace.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace atomic_sim
{
    enum class OpportunityKind : std::uint8_t
    {
        None,
        Collect,
        Configure,
        React,
        Associate,
    };

    inline constexpr std::string_view to_string(OpportunityKind k) noexcept
    {
        switch (k)
        {
        case OpportunityKind::None: return "none";
        case OpportunityKind::Collect: return "collect";
        case OpportunityKind::Configure: return "configure";
        case OpportunityKind::React: return "react";
        case OpportunityKind::Associate: return "associate";
        }
        return "?";
    }

    inline OpportunityKind opportunity_kind_from_string(std::string_view s)
    {
        for (auto k : {OpportunityKind::None, OpportunityKind::Collect, OpportunityKind::Configure,
                       OpportunityKind::React, OpportunityKind::Associate})
            if (to_string(k) == s)
                return k;
        throw ConfigError("unknown opportunity kind '" + std::string(s) + "'");
    }

    // ---------------------------------------------------------------------------------------
    // Flowtable

    struct FlowEntry
    {
        std::uint32_t entry_id = 0;
        Bytes match;
        Bytes action;
        Micros installed_at{0};
        Micros lifetime{300'000'000};

        /// Same rule content (install time and lifetime aside).
        bool same_rule(const FlowEntry &o) const noexcept
        {
            return entry_id == o.entry_id && match == o.match && action == o.action;
        }
    };

    enum class Intent : std::uint8_t
    {
        Report,
        Alert,
        Solicit,
    };

    struct NodeSdnState
    {
        NodeId node_id = 0;
        bool synced = true;
        bool registered = true;
        std::uint32_t epoch_seq_local = 0;
        std::vector<FlowEntry> flowtable;
        std::optional<Intent> pending;

        double drift_ppm = 0.0;
        double clock_error_us = 0.0;
    };

    /// Removes entries with installed_at + lifetime < now.
    inline std::size_t expire_flowtables(NodeSdnState &node, Micros now)
    {
        return std::erase_if(node.flowtable, [&](const FlowEntry &e) { return e.installed_at + e.lifetime < now; });
    }

    inline void install_entry(NodeSdnState &node, FlowEntry e)
    {
        auto it = std::find_if(node.flowtable.begin(), node.flowtable.end(),
                               [&](const FlowEntry &x) { return x.entry_id == e.entry_id; });
        if (it != node.flowtable.end())
            *it = std::move(e);
        else
            node.flowtable.push_back(std::move(e));
    }

    // ---------------------------------------------------------------------------------------
    // Payloads

    struct IndPayload
    {
        OpportunityKind kind = OpportunityKind::None;
        std::uint32_t epoch_seq = 0;
        std::uint16_t phase_count = 1;
        std::uint32_t max_span_us = 0;
        NodeFlags role_flags{};
    };

    inline FloodPacket encode_ind(const IndPayload &ind)
    {
        FloodPacket p;
        p.phase_type = PhaseKind::Ind;
        p.epoch_seq = static_cast<std::uint16_t>(ind.epoch_seq);
        p.flags = ind.role_flags;
        p.payload.push_back(static_cast<std::uint8_t>(ind.kind));
        put_u32(p.payload, ind.epoch_seq);
        put_u16(p.payload, ind.phase_count);
        put_u32(p.payload, ind.max_span_us);
        return p;
    }

    inline IndPayload decode_ind(const FloodPacket &p)
    {
        if (p.phase_type != PhaseKind::Ind)
            throw DecodeError("not an IND packet");
        ByteReader r(p.payload);
        IndPayload ind;
        auto k = r.u8();
        if (k > static_cast<std::uint8_t>(OpportunityKind::Associate))
            throw DecodeError("unknown opportunity kind");
        ind.kind = static_cast<OpportunityKind>(k);
        ind.epoch_seq = r.u32();
        ind.phase_count = r.u16();
        ind.max_span_us = r.u32();
        ind.role_flags = p.flags;
        return ind;
    }

    enum class ReportKind : std::uint8_t
    {
        Report = 0,
        Alert = 1,
        Join = 2,
    };

    struct ReportPayload
    {
        ReportKind kind = ReportKind::Report;
        NodeId node_id = 0;
        std::uint32_t rdc_millipercent = 0;
        std::uint16_t flowtable_count = 0;
        std::uint32_t uptime_s = 0;
        Bytes tail;

        friend bool operator==(const ReportPayload &, const ReportPayload &) = default;
    };

    inline Bytes encode_report(const ReportPayload &r)
    {
        Bytes b;
        b.push_back(static_cast<std::uint8_t>(r.kind));
        put_u16(b, r.node_id);
        put_u32(b, r.rdc_millipercent);
        put_u16(b, r.flowtable_count);
        put_u32(b, r.uptime_s);
        b.insert(b.end(), r.tail.begin(), r.tail.end());
        return b;
    }

    inline ReportPayload decode_report(std::span<const std::uint8_t> in)
    {
        ByteReader rd(in);
        ReportPayload r;
        auto k = rd.u8();
        if (k > static_cast<std::uint8_t>(ReportKind::Join))
            throw DecodeError("unknown report kind");
        r.kind = static_cast<ReportKind>(k);
        r.node_id = rd.u16();
        r.rdc_millipercent = rd.u32();
        r.flowtable_count = rd.u16();
        r.uptime_s = rd.u32();
        auto rest = rd.rest();
        r.tail.assign(rest.begin(), rest.end());
        return r;
    }

    struct SolicitPayload
    {
        NodeId node_id = 0;
        std::uint32_t request_id = 0;
    };

    inline Bytes encode_solicit(const SolicitPayload &s)
    {
        Bytes b;
        put_u16(b, s.node_id);
        put_u32(b, s.request_id);
        return b;
    }

    inline SolicitPayload decode_solicit(std::span<const std::uint8_t> in)
    {
        ByteReader r(in);
        SolicitPayload s;
        s.node_id = r.u16();
        s.request_id = r.u32();
        return s;
    }

    /// Addressed SET: `target` names one node, or kFlagsTarget to address the packet flags.
    inline constexpr NodeId kFlagsTarget = 0xffff;

    struct SetPayload
    {
        NodeId target = kFlagsTarget;
        std::uint32_t entry_id = 0;
        Bytes match;
        Bytes action;
        std::uint32_t lifetime_s = 300;
    };

    inline Bytes encode_set(const SetPayload &s)
    {
        if (s.match.size() > 255 || s.action.size() > 255)
            throw std::length_error("flow entry fields longer than 255 bytes");
        Bytes b;
        put_u16(b, s.target);
        put_u32(b, s.entry_id);
        b.push_back(static_cast<std::uint8_t>(s.match.size()));
        b.insert(b.end(), s.match.begin(), s.match.end());
        b.push_back(static_cast<std::uint8_t>(s.action.size()));
        b.insert(b.end(), s.action.begin(), s.action.end());
        put_u32(b, s.lifetime_s);
        return b;
    }

    inline SetPayload decode_set(std::span<const std::uint8_t> in)
    {
        ByteReader r(in);
        SetPayload s;
        s.target = r.u16();
        s.entry_id = r.u32();
        auto m = r.take(r.u8());
        s.match.assign(m.begin(), m.end());
        auto a = r.take(r.u8());
        s.action.assign(a.begin(), a.end());
        s.lifetime_s = r.u32();
        return s;
    }

    inline Bytes encode_ack(NodeId node)
    {
        Bytes b;
        put_u16(b, node);
        return b;
    }

    inline NodeId decode_ack(std::span<const std::uint8_t> in)
    {
        ByteReader r(in);
        return r.u16();
    }

    // ---------------------------------------------------------------------------------------
    // Controller

    enum class PolicyKind : std::uint8_t
    {
        RoundRobin,
        Queue,
    };

    struct RegistryEntry
    {
        bool registered = true;
        bool synced = true;
        std::optional<Micros> last_report_time;
        Micros next_collect_due{0};
        std::optional<Micros> config_expires; // controller's view of the node's entry expiry
        bool boot_pending = false;
    };

    struct ControllerState
    {
        std::uint32_t epoch_seq = 0;
        std::vector<RegistryEntry> node_registry;
        PolicyKind policy = PolicyKind::RoundRobin;
        std::vector<OpportunityKind> rotation{OpportunityKind::Collect, OpportunityKind::Configure,
                                              OpportunityKind::React};
        std::vector<OpportunityKind> queue;
        std::size_t cursor = 0;
        Micros collect_period{60'000'000};
        Micros flowtable_lifetime{300'000'000};

        /// Next kind according to the policy. The queue policy falls back to NONE when drained.
        OpportunityKind next_kind()
        {
            if (policy == PolicyKind::Queue)
                return cursor < queue.size() ? queue[cursor++] : OpportunityKind::None;
            if (rotation.empty())
                return OpportunityKind::None;
            return rotation[cursor++ % rotation.size()];
        }
    };

    // ---------------------------------------------------------------------------------------
    // World

    enum class ReactWorkload : std::uint8_t
    {
        None,
        Poisson,  // per-node events at react_rate_hz
        Saturate, // every synced node solicits in every REACT opportunity
    };

    struct WorldConfig
    {
        std::uint64_t seed = 1;
        ProtocolTiming timing = ProtocolTiming::uniform(FloodConfig{});
        EpochConfig epoch{};
        bool back_to_back = false; // next epoch starts one gap after the opportunity ends
        CaptureModel capture{};
        double drop_probability = 0.0;
        std::vector<Channel> channel_pool{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
        std::vector<Channel> association_channels{2, 3};
        std::size_t hop_length = 16;
        Nanos jitter_max{192'000}; // shared-flood initiator start jitter

        PolicyKind policy = PolicyKind::RoundRobin;
        std::vector<OpportunityKind> rotation{OpportunityKind::Collect, OpportunityKind::Configure,
                                              OpportunityKind::React};
        std::vector<OpportunityKind> queue;
        Micros collect_period{60'000'000};
        Micros flowtable_lifetime{300'000'000};
        std::uint32_t cap_factor = kDefaultCapFactor;
        std::uint32_t cap_slack = kDefaultCapSlack;
        std::uint32_t react_retry_limit = 0; // REACT opportunities before a solicitation is abandoned; 0 = never
        std::uint32_t association_period = 1;

        ReactWorkload react_workload = ReactWorkload::Poisson;
        double react_rate_hz = 1.0 / 120.0;
        bool configure_shared = false; // one identical entry for every node instead of per-node routes
        std::map<NodeId, FlowEntry> react_responses;

        double drift_max_ppm = 0.0;
        std::vector<NodeId> cold_boot; // start unsynced and unregistered
        bool trace = false;
        bool record_windows = false;

        void validate(std::size_t network_size) const
        {
            timing.validate();
            epoch.validate();
            if (!(drop_probability >= 0.0 && drop_probability <= 1.0))
                throw ConfigError("drop_probability must lie in [0,1]");
            if (collect_period.count() == 0 || flowtable_lifetime.count() == 0)
                throw ConfigError("durations must be positive");
            if (react_rate_hz < 0.0 || drift_max_ppm < 0.0)
                throw ConfigError("rates must be non-negative");
            if (association_period == 0)
                throw ConfigError("association_period must be positive");
            if (policy == PolicyKind::RoundRobin && rotation.empty())
                throw ConfigError("round-robin rotation is empty");
            (void)hop_sequence(0, channel_pool, association_channels, hop_length);
            for (auto id : cold_boot)
                if (id >= network_size)
                    throw ConfigError("cold_boot node id out of range");
        }
    };

    struct NodeMetrics
    {
        std::uint64_t initiated = 0;
        std::uint64_t completed = 0;
        std::uint64_t failed = 0;
        Micros latency_sum{0};
        std::uint64_t latency_count = 0;
        Micros radio_on{0};

        double pdr() const noexcept
        {
            auto closed = completed + failed;
            return closed == 0 ? 1.0 : static_cast<double>(completed) / static_cast<double>(closed);
        }

        double mean_latency_us() const noexcept
        {
            return latency_count == 0 ? 0.0
                                      : static_cast<double>(latency_sum.count()) / static_cast<double>(latency_count);
        }
    };

    struct OpportunityRecord
    {
        std::uint32_t epoch_seq = 0;
        OpportunityKind kind = OpportunityKind::None;
        std::uint32_t n_participants = 0;
        Micros start{0};
        Micros span{0};
        Micros bound{0};
        Micros guard_allowance{0};
        bool complete = true;
        std::uint32_t pairs = 0;
        std::vector<PhaseRecord> phases;

        std::size_t count(PhaseKind k) const
        {
            std::size_t c = 0;
            for (const auto &p : phases)
                c += p.kind == k;
            return c;
        }
    };

    struct ConfigTarget
    {
        NodeId node = 0;
        FlowEntry entry;
    };

    struct EpochResult
    {
        OpportunityRecord record;
        Micros epoch_start{0};
        Micros sleep{0};
    };

    class World
    {
    public:
        World(Topology topo, WorldConfig cfg)
            : topo_(std::move(topo)), cfg_(std::move(cfg)),
              medium_(topo_, cfg_.capture, RandomStream::derive(cfg_.seed, "link"),
                      LossInjector{cfg_.drop_probability, RandomStream::derive(cfg_.seed, "drop")}),
              trace_(cfg_.trace), workload_rng_(RandomStream::derive(cfg_.seed, "workload")),
              contention_rng_(RandomStream::derive(cfg_.seed, "contention"))
        {
            if (topo_.size() == 0)
                throw ConfigError("world needs at least one node");
            if (topo_.size() > kFlagsTarget)
                throw ConfigError("network too large for 16-bit node ids");
            cfg_.timing.apply_aliases();
            cfg_.validate(topo_.size());
            const auto n = topo_.size();
            controller_.policy = cfg_.policy;
            controller_.rotation = cfg_.rotation;
            controller_.queue = cfg_.queue;
            controller_.collect_period = cfg_.collect_period;
            controller_.flowtable_lifetime = cfg_.flowtable_lifetime;
            controller_.node_registry.resize(n);
            nodes_.resize(n);
            metrics_.resize(n);
            exchanges_.resize(n);
            next_event_.assign(n, Micros{0});
            auto drift = RandomStream::derive(cfg_.seed, "drift");
            for (NodeId i = 0; i < n; ++i)
            {
                nodes_[i].node_id = i;
                nodes_[i].drift_ppm = cfg_.drift_max_ppm > 0.0 ? (2.0 * drift.uniform() - 1.0) * cfg_.drift_max_ppm : 0.0;
                next_event_[i] = draw_event_gap();
            }
            for (auto id : cfg_.cold_boot)
            {
                if (id == topo_.controller())
                    continue;
                nodes_[id].synced = false;
                nodes_[id].registered = false;
                controller_.node_registry[id].registered = false;
                controller_.node_registry[id].synced = false;
            }
            hops_ = topo_.hop_distances(topo_.controller());
        }

        World(const World &) = delete;
        World &operator=(const World &) = delete;

        const Topology &topology() const noexcept { return topo_; }
        const WorldConfig &config() const noexcept { return cfg_; }
        const ControllerState &controller_state() const noexcept { return controller_; }
        const std::vector<NodeSdnState> &nodes() const noexcept { return nodes_; }
        const NodeSdnState &node(NodeId id) const { return nodes_.at(id); }
        const std::vector<NodeMetrics> &metrics() const noexcept { return metrics_; }
        const std::vector<OpportunityRecord> &opportunities() const noexcept { return records_; }
        const std::vector<RadioWindow> &windows() const noexcept { return windows_; }
        const Trace &trace() const noexcept { return trace_; }
        const std::vector<std::optional<std::uint32_t>> &hop_distances() const noexcept { return hops_; }
        Micros now() const noexcept { return now_; }
        NodeId controller_id() const noexcept { return topo_.controller(); }

        double rdc(NodeId id) const
        {
            return now_.count() == 0 ? 0.0
                                     : static_cast<double>(metrics_.at(id).radio_on.count()) /
                                           static_cast<double>(now_.count());
        }

        /// Marks a node as wanting controller instruction; served in the next REACT opportunity.
        void node_react(NodeId id)
        {
            check_node(id);
            if (!nodes_[id].synced)
                throw ConfigError("node_react on an unsynchronized node");
            if (id != topo_.controller())
                nodes_[id].pending = Intent::Solicit;
        }

        EpochResult run_epoch() { return run_epoch_with(std::nullopt, {}, false); }

        /// Runs one epoch with a forced opportunity kind (participants still come from the workload).
        EpochResult run_opportunity(OpportunityKind kind) { return run_epoch_with(kind, {}, false); }

        /// Runs one CONFIGURE epoch for the given targets. With `shared` and identical entries a
        /// single SET phase addresses every target through the IND/SET flags.
        EpochResult configure_nodes(std::span<const ConfigTarget> targets, bool shared)
        {
            if (targets.empty())
                throw ConfigError("configure_nodes needs at least one target");
            for (const auto &t : targets)
                check_node(t.node);
            std::vector<ConfigTarget> v(targets.begin(), targets.end());
            return run_epoch_with(OpportunityKind::Configure, std::move(v), shared);
        }

        /// Runs epochs until simulated time reaches `end`.
        void run_until(Micros end)
        {
            while (now_ < end)
                run_epoch();
        }

    private:
        struct Exchange
        {
            bool open = false;
            OpportunityKind kind = OpportunityKind::None;
            Micros origin{0};
            std::uint32_t attempts = 0;
            std::uint32_t request_id = 0;
        };

        struct NodeRun
        {
            bool heard_ind = false;
            bool flagged = false;
            bool source = false;
            bool served = false;
            bool done = false;
            std::uint32_t empty = 0;
        };

        struct SetSpec
        {
            NodeFlags flags;
            SetPayload payload;
        };

        struct OpCtx
        {
            World *w = nullptr;
            OpportunityKind kind = OpportunityKind::None;
            IndPayload ind{};
            FloodPacket ind_packet{};
            HopSequence hop{};
            Micros start{0};
            std::uint32_t stop_after_empty = 2;
            std::vector<NodeRun> run;
            std::vector<SetSpec> sets;
            NodeFlags boot_flags{};
            std::optional<NodeId> heard_source;
            std::uint64_t nonce_base = 0;

            std::size_t node_count() const { return w->topo_.size(); }
            NodeId controller() const { return w->topo_.controller(); }
            FloodOutcome run_phase(const PhaseInstance &inst, std::span<const FloodParticipant> parts)
            {
                return w->run_phase(*this, inst, parts);
            }
        };

        // --- helpers -------------------------------------------------------------------------

        void check_node(NodeId id) const
        {
            if (id >= topo_.size())
                throw ConfigError("unknown node id " + std::to_string(id));
        }

        Micros draw_event_gap()
        {
            if (cfg_.react_workload != ReactWorkload::Poisson || cfg_.react_rate_hz <= 0.0)
                return Micros{~std::uint64_t{0} / 2};
            double u = workload_rng_.uniform();
            return Micros{static_cast<std::uint64_t>(-std::log1p(-u) / cfg_.react_rate_hz * 1e6)};
        }

        FloodPacket packet(PhaseKind k, NodeFlags flags, Bytes payload) const
        {
            FloodPacket p;
            p.phase_type = k;
            p.epoch_seq = static_cast<std::uint16_t>(controller_.epoch_seq);
            p.flags = std::move(flags);
            p.payload = std::move(payload);
            return p;
        }

        FlowEntry route_entry(NodeId id) const
        {
            FlowEntry e;
            if (cfg_.configure_shared)
            {
                e.entry_id = 1;
                e.match = {'*'};
                e.action = {'f', 'w', 'd'};
            }
            else
            {
                e.entry_id = 1u + id;
                e.match = {static_cast<std::uint8_t>(id & 0xff), static_cast<std::uint8_t>(id >> 8)};
                e.action = {'f', 'w', 'd'};
            }
            e.lifetime = cfg_.flowtable_lifetime;
            return e;
        }

        FlowEntry react_entry(NodeId id) const
        {
            if (auto it = cfg_.react_responses.find(id); it != cfg_.react_responses.end())
            {
                auto e = it->second;
                e.lifetime = cfg_.flowtable_lifetime;
                return e;
            }
            FlowEntry e;
            e.entry_id = 0x10000u + id;
            e.match = {static_cast<std::uint8_t>(id & 0xff), static_cast<std::uint8_t>(id >> 8)};
            e.action = {'d', 'r', 'o', 'p'};
            e.lifetime = cfg_.flowtable_lifetime;
            return e;
        }

        static SetPayload set_payload(NodeId target, const FlowEntry &e)
        {
            return {target, e.entry_id, e.match, e.action, static_cast<std::uint32_t>(e.lifetime.count() / 1'000'000)};
        }

        Micros rx_done(const PhaseInstance &inst, const NodeFloodResult &r) const
        {
            return r.rx_time + inst.phase.flood.slot.t_tx;
        }

        void complete_exchange(NodeId id, Micros at)
        {
            auto &ex = exchanges_[id];
            if (!ex.open)
                return;
            ex.open = false;
            auto &m = metrics_[id];
            ++m.completed;
            m.latency_sum += at - ex.origin;
            ++m.latency_count;
        }

        void fail_exchange(NodeId id)
        {
            auto &ex = exchanges_[id];
            if (!ex.open)
                return;
            ex.open = false;
            ++metrics_[id].failed;
        }

        void open_exchange(NodeId id, OpportunityKind kind, Micros origin)
        {
            auto &ex = exchanges_[id];
            if (ex.open)
                return;
            ex = {true, kind, origin, 0, ++request_counter_};
            ++metrics_[id].initiated;
        }

        void sync_from(NodeId id, const NodeFloodResult &r)
        {
            auto &n = nodes_[id];
            n.synced = true;
            n.clock_error_us = 0.0;
            n.epoch_seq_local = r.packet.phase_type == PhaseKind::Ind ? decode_ind(r.packet).epoch_seq
                                                                       : r.packet.epoch_seq;
        }

        // --- hooks ---------------------------------------------------------------------------

        static FloodParticipant listener_role(OpCtx &c, NodeId id)
        {
            const auto &n = c.w->nodes_[id];
            if (!n.synced)
                return {FloodRole::Destination, std::nullopt, Nanos{0},
                        c.w->cfg_.association_channels[id % c.w->cfg_.association_channels.size()]};
            const auto &r = c.run[id];
            if (!r.heard_ind || r.done)
                return {};
            return {FloodRole::Forwarder, std::nullopt, Nanos{0}, std::nullopt};
        }

        static void passive_post(OpCtx &c, const PhaseInstance &, NodeId id, const NodeFloodResult &r)
        {
            if (!c.w->nodes_[id].synced && r.success)
                c.w->sync_from(id, r);
        }

        static FloodParticipant controller_listen(OpCtx &, const PhaseInstance &, NodeId)
        {
            return {FloodRole::Destination, std::nullopt, Nanos{0}, std::nullopt};
        }

        static FloodParticipant node_listen(OpCtx &c, const PhaseInstance &, NodeId id) { return listener_role(c, id); }

        static FloodParticipant ind_controller_pre(OpCtx &c, const PhaseInstance &, NodeId)
        {
            return {FloodRole::Initiator, c.ind_packet, Nanos{0}, std::nullopt};
        }

        static FloodParticipant ind_node_pre(OpCtx &c, const PhaseInstance &, NodeId id)
        {
            if (!c.w->nodes_[id].synced)
                return listener_role(c, id);
            return {FloodRole::Forwarder, std::nullopt, Nanos{0}, std::nullopt};
        }

        static void ind_node_post(OpCtx &c, const PhaseInstance &, NodeId id, const NodeFloodResult &r)
        {
            auto &n = c.w->nodes_[id];
            if (!r.success)
                return;
            if (!n.synced)
            {
                c.w->sync_from(id, r);
                return; // joins the schedule from the next epoch
            }
            c.w->sync_from(id, r);
            auto &run = c.run[id];
            run.heard_ind = true;
            run.flagged = c.ind.role_flags.test(id);
            switch (c.kind)
            {
            case OpportunityKind::Collect:
                run.source = run.flagged;
                break;
            case OpportunityKind::React:
                run.source = run.flagged && n.pending == Intent::Solicit;
                break;
            case OpportunityKind::Associate:
                run.source = run.flagged && !n.registered;
                break;
            default:
                break;
            }
        }

        static FloodParticipant shared_node_pre(OpCtx &c, const PhaseInstance &inst, NodeId id)
        {
            auto &run = c.run[id];
            auto &n = c.w->nodes_[id];
            if (!n.synced || !run.heard_ind || !run.source || run.served)
                return listener_role(c, id);
            World &w = *c.w;
            FloodPacket p;
            if (inst.phase.kind == PhaseKind::Solicit)
            {
                w.open_exchange(id, OpportunityKind::React, c.start);
                p = w.packet(PhaseKind::Solicit, NodeFlags{}, encode_solicit({id, w.exchanges_[id].request_id}));
            }
            else
            {
                if (c.kind == OpportunityKind::Collect)
                    w.open_exchange(id, OpportunityKind::Collect, c.start);
                ReportPayload rep;
                rep.kind = c.kind == OpportunityKind::Associate ? ReportKind::Join
                           : n.pending == Intent::Alert       ? ReportKind::Alert
                                                               : ReportKind::Report;
                rep.node_id = id;
                rep.rdc_millipercent = static_cast<std::uint32_t>(w.rdc(id) * 100'000.0);
                rep.flowtable_count = static_cast<std::uint16_t>(n.flowtable.size());
                rep.uptime_s = static_cast<std::uint32_t>(c.start.count() / 1'000'000);
                p = w.packet(PhaseKind::Report, NodeFlags{}, encode_report(rep));
            }
            const Micros spare = inst.phase.flood.slot_len() - inst.phase.flood.slot.t_tx;
            const auto max_ns = std::min<std::int64_t>(w.cfg_.jitter_max.count(),
                                                       std::chrono::duration_cast<Nanos>(spare).count() - 1);
            Nanos offset{max_ns > 0 ? static_cast<std::int64_t>(w.contention_rng_.below(
                                          static_cast<std::uint64_t>(max_ns) / 1000 + 1)) * 1000
                                    : 0};
            return {FloodRole::Initiator, std::move(p), offset, std::nullopt};
        }

        static void shared_controller_post(OpCtx &c, const PhaseInstance &inst, NodeId, const NodeFloodResult &r)
        {
            c.heard_source.reset();
            if (!r.success)
                return;
            World &w = *c.w;
            if (r.packet.phase_type == PhaseKind::Solicit)
            {
                c.heard_source = decode_solicit(r.packet.payload).node_id;
                return;
            }
            if (r.packet.phase_type != PhaseKind::Report)
                return;
            auto rep = decode_report(r.packet.payload);
            c.heard_source = rep.node_id;
            auto &reg = w.controller_.node_registry[rep.node_id];
            if (rep.kind == ReportKind::Join && !reg.registered)
            {
                reg.registered = true;
                reg.synced = true;
                reg.boot_pending = true;
                reg.next_collect_due = c.start + w.controller_.collect_period;
            }
            reg.last_report_time = w.rx_done(inst, r);
            if (rep.kind != ReportKind::Join)
                reg.next_collect_due = c.start + w.controller_.collect_period;
        }

        static FloodParticipant reply_controller_pre(OpCtx &c, const PhaseInstance &inst, NodeId)
        {
            World &w = *c.w;
            if (!c.heard_source)
                return {FloodRole::Initiator, w.packet(PhaseKind::Nack, NodeFlags{}, {}), Nanos{0}, std::nullopt};
            const NodeId src = *c.heard_source;
            if (inst.phase.kind == PhaseKind::Set)
            {
                NodeFlags f(w.topo_.size());
                f.set(src);
                return {FloodRole::Initiator, w.packet(PhaseKind::Set, f, encode_set(set_payload(src, w.react_entry(src)))),
                        Nanos{0}, std::nullopt};
            }
            return {FloodRole::Initiator, w.packet(PhaseKind::Ack, NodeFlags{}, encode_ack(src)), Nanos{0}, std::nullopt};
        }

        static void reply_node_post(OpCtx &c, const PhaseInstance &inst, NodeId id, const NodeFloodResult &r)
        {
            auto &n = c.w->nodes_[id];
            if (!n.synced)
            {
                passive_post(c, inst, id, r);
                return;
            }
            World &w = *c.w;
            auto &run = c.run[id];
            bool productive = r.success && (r.packet.phase_type == PhaseKind::Ack || r.packet.phase_type == PhaseKind::Set);
            if (productive && !run.served && run.source)
            {
                bool mine = false;
                if (r.packet.phase_type == PhaseKind::Ack)
                    mine = decode_ack(r.packet.payload) == id;
                else
                {
                    auto s = decode_set(r.packet.payload);
                    if (s.target == id)
                    {
                        mine = true;
                        FlowEntry e{s.entry_id, s.match, s.action, w.rx_done(inst, r), Micros{s.lifetime_s * 1'000'000ull}};
                        install_entry(n, std::move(e));
                    }
                }
                if (mine)
                {
                    run.served = true;
                    if (c.kind == OpportunityKind::Associate)
                        n.registered = true;
                    else
                    {
                        w.complete_exchange(id, w.rx_done(inst, r));
                        if (c.kind == OpportunityKind::React)
                            n.pending.reset();
                        else if (n.pending == Intent::Report || n.pending == Intent::Alert)
                            n.pending.reset();
                    }
                }
            }
            run.empty = productive ? 0 : run.empty + 1;
            if (run.empty >= c.stop_after_empty && !(run.source && !run.served))
                run.done = true;
        }

        static FloodParticipant set_controller_pre(OpCtx &c, const PhaseInstance &inst, NodeId id)
        {
            if (inst.in_repeat)
                return reply_controller_pre(c, inst, id);
            World &w = *c.w;
            const auto &spec = c.sets.at(inst.schedule_index - 1);
            return {FloodRole::Initiator, w.packet(PhaseKind::Set, spec.flags, encode_set(spec.payload)), Nanos{0},
                    std::nullopt};
        }

        static void set_node_post(OpCtx &c, const PhaseInstance &inst, NodeId id, const NodeFloodResult &r)
        {
            if (inst.in_repeat)
            {
                reply_node_post(c, inst, id, r);
                return;
            }
            auto &n = c.w->nodes_[id];
            if (!n.synced)
            {
                passive_post(c, inst, id, r);
                return;
            }
            if (!r.success || r.packet.phase_type != PhaseKind::Set)
                return;
            auto s = decode_set(r.packet.payload);
            bool mine = s.target == id || (s.target == kFlagsTarget && r.packet.flags.test(id));
            if (!mine)
                return;
            World &w = *c.w;
            install_entry(n, {s.entry_id, s.match, s.action, w.rx_done(inst, r), Micros{s.lifetime_s * 1'000'000ull}});
            w.complete_exchange(id, w.rx_done(inst, r));
        }

        static FloodParticipant boot_controller_pre(OpCtx &c, const PhaseInstance &, NodeId)
        {
            World &w = *c.w;
            FlowEntry e;
            e.entry_id = 0;
            e.action = {'b', 'o', 'o', 't'};
            e.lifetime = w.cfg_.flowtable_lifetime;
            for (auto &reg : w.controller_.node_registry)
                reg.boot_pending = false;
            return {FloodRole::Initiator, w.packet(PhaseKind::Boot, c.boot_flags, encode_set(set_payload(kFlagsTarget, e))),
                    Nanos{0}, std::nullopt};
        }

        static void boot_node_post(OpCtx &c, const PhaseInstance &inst, NodeId id, const NodeFloodResult &r)
        {
            auto &n = c.w->nodes_[id];
            if (!n.synced)
            {
                passive_post(c, inst, id, r);
                return;
            }
            if (!r.success || !r.packet.flags.test(id))
                return;
            auto s = decode_set(r.packet.payload);
            n.registered = true;
            install_entry(n, {s.entry_id, s.match, s.action, c.w->rx_done(inst, r), Micros{s.lifetime_s * 1'000'000ull}});
        }

        static const HookTable<OpCtx> &hooks()
        {
            static const HookTable<OpCtx> table = [] {
                HookTable<OpCtx> t{};
                auto at = [&](PhaseKind k, Station s) -> PhaseHooks<OpCtx> & {
                    return t[index_of(k)][static_cast<std::size_t>(s)];
                };
                at(PhaseKind::Ind, Station::Controller) = {ind_controller_pre, nullptr};
                at(PhaseKind::Ind, Station::Node) = {ind_node_pre, ind_node_post};
                for (auto k : {PhaseKind::Report, PhaseKind::Solicit, PhaseKind::Alert})
                {
                    at(k, Station::Controller) = {controller_listen, shared_controller_post};
                    at(k, Station::Node) = {shared_node_pre, passive_post};
                }
                at(PhaseKind::Ack, Station::Controller) = {reply_controller_pre, nullptr};
                at(PhaseKind::Ack, Station::Node) = {node_listen, reply_node_post};
                at(PhaseKind::Set, Station::Controller) = {set_controller_pre, nullptr};
                at(PhaseKind::Set, Station::Node) = {node_listen, set_node_post};
                at(PhaseKind::Boot, Station::Controller) = {boot_controller_pre, nullptr};
                at(PhaseKind::Boot, Station::Node) = {node_listen, boot_node_post};
                for (auto k : {PhaseKind::Nack, PhaseKind::Stop})
                {
                    at(k, Station::Controller) = {reply_controller_pre, nullptr};
                    at(k, Station::Node) = {node_listen, reply_node_post};
                }
                return t;
            }();
            return table;
        }

        // --- phase execution -----------------------------------------------------------------

        FloodOutcome run_phase(OpCtx &c, const PhaseInstance &inst, std::span<const FloodParticipant> parts)
        {
            FloodRun run;
            run.start = inst.start;
            run.guard = inst.phase.guard;
            run.phase = inst.phase.kind;
            run.contention_nonce = mix64(c.nonce_base ^ (inst.schedule_index * 0x100000001b3ull) ^
                                         (std::uint64_t{inst.iteration} << 32));
            run.trace = trace_.enabled() ? &trace_ : nullptr;
            bool any_initiator = false;
            for (const auto &p : parts)
                if (p.role == FloodRole::Initiator)
                {
                    any_initiator = true;
                    run.phase = p.packet->phase_type;
                    break;
                }
            FloodOutcome out = any_initiator ? run_flood(inst.phase.flood, parts, c.hop, medium_, run)
                                             : idle_listen(inst.phase.flood, parts, run);
            for (NodeId i = 0; i < parts.size(); ++i)
                if (nodes_[i].synced || i == topo_.controller())
                    metrics_[i].radio_on += out.nodes[i].radio_on;
            if (cfg_.record_windows)
                for (const auto &win : out.windows)
                    if (nodes_[win.node].synced || win.node == topo_.controller())
                        windows_.push_back(win);
            return out;
        }

        // --- epoch ---------------------------------------------------------------------------

        void apply_workload(Micros t0)
        {
            if (cfg_.react_workload != ReactWorkload::Poisson)
                return;
            for (NodeId i = 0; i < nodes_.size(); ++i)
            {
                if (i == topo_.controller())
                    continue;
                while (next_event_[i] <= t0)
                {
                    if (nodes_[i].synced && nodes_[i].registered && !nodes_[i].pending)
                        nodes_[i].pending = Intent::Solicit;
                    next_event_[i] += draw_event_gap();
                }
            }
        }

        void apply_drift(Micros elapsed)
        {
            for (NodeId i = 0; i < nodes_.size(); ++i)
            {
                auto &n = nodes_[i];
                if (i == topo_.controller() || !n.synced || n.drift_ppm == 0.0)
                    continue;
                n.clock_error_us += n.drift_ppm * 1e-6 * static_cast<double>(elapsed.count());
                if (std::abs(n.clock_error_us) > static_cast<double>(cfg_.timing.guard.count()))
                {
                    n.synced = false; // parks on an association channel until it hears a flood
                    fail_exchange(i);
                }
            }
        }

        Micros lookahead() const
        {
            auto period = cfg_.back_to_back ? Micros{0} : cfg_.epoch.period;
            return controller_.rotation.size() * period;
        }

        OpportunityKind select_kind()
        {
            bool boot = false, unregistered = false;
            for (NodeId i = 0; i < nodes_.size(); ++i)
            {
                if (i == topo_.controller())
                    continue;
                boot |= controller_.node_registry[i].boot_pending;
                unregistered |= !controller_.node_registry[i].registered;
            }
            if (boot || (unregistered && controller_.epoch_seq % cfg_.association_period == 0))
                return OpportunityKind::Associate;
            return controller_.next_kind();
        }

        EpochResult run_epoch_with(std::optional<OpportunityKind> forced, std::vector<ConfigTarget> targets,
                                   bool shared)
        {
            const Micros t0 = now_;
            const auto n = topo_.size();
            const NodeId ctrl = topo_.controller();
            for (auto &node : nodes_)
                expire_flowtables(node, t0);
            apply_workload(t0);

            OpportunityKind kind = forced ? *forced : select_kind();
            OpCtx c;
            c.w = this;
            c.start = t0;
            c.run.assign(n, NodeRun{});
            c.nonce_base = contention_rng_.next();
            c.hop = hop_sequence(controller_.epoch_seq, cfg_.channel_pool, cfg_.association_channels, cfg_.hop_length);
            NodeFlags flags(n);
            std::uint32_t participants = 0;
            bool truncated = false;
            const auto pt = cfg_.timing.phase_timings();
            PhaseSchedule schedule;

            auto eligible = [&](NodeId i) {
                return i != ctrl && controller_.node_registry[i].registered;
            };

            if (kind == OpportunityKind::Collect)
            {
                for (NodeId i = 0; i < n; ++i)
                    if (eligible(i) && controller_.node_registry[i].next_collect_due <= t0 + lookahead())
                    {
                        flags.set(i);
                        ++participants;
                    }
                if (participants == 0 && !forced) // a forced collect still runs its empty pairs
                    kind = OpportunityKind::None;
            }
            else if (kind == OpportunityKind::Configure)
            {
                if (!forced)
                {
                    for (NodeId i = 0; i < n; ++i)
                    {
                        const auto &reg = controller_.node_registry[i];
                        if (eligible(i) && (!reg.config_expires || *reg.config_expires <= t0 + lookahead() + cfg_.epoch.period))
                            targets.push_back({i, route_entry(i)});
                    }
                    shared = cfg_.configure_shared;
                }
                if (targets.empty())
                    kind = OpportunityKind::None;
            }
            else if (kind == OpportunityKind::React)
            {
                if (cfg_.react_workload == ReactWorkload::Saturate)
                    for (NodeId i = 0; i < n; ++i)
                        if (i != ctrl && nodes_[i].synced && !nodes_[i].pending)
                            nodes_[i].pending = Intent::Solicit;
                for (NodeId i = 0; i < n; ++i)
                    if (eligible(i))
                    {
                        flags.set(i);
                        if (nodes_[i].synced && nodes_[i].pending == Intent::Solicit)
                            ++participants;
                    }
            }
            else if (kind == OpportunityKind::Associate)
            {
                for (NodeId i = 0; i < n; ++i)
                    if (i != ctrl && !controller_.node_registry[i].registered)
                    {
                        flags.set(i);
                        ++participants;
                    }
            }

            const Micros budget = cfg_.epoch.max_control;
            std::uint32_t pair_pending = 0;
            switch (kind)
            {
            case OpportunityKind::None:
                schedule = build_dissemination(0, cfg_.timing);
                break;
            case OpportunityKind::Configure: {
                std::sort(targets.begin(), targets.end(), [](auto &a, auto &b) { return a.node < b.node; });
                bool identical = std::all_of(targets.begin(), targets.end(),
                                             [&](const ConfigTarget &t) { return t.entry.same_rule(targets.front().entry); });
                if (shared && identical)
                {
                    NodeFlags f(n);
                    for (const auto &t : targets)
                        f.set(t.node);
                    c.sets.push_back({f, set_payload(kFlagsTarget, targets.front().entry)});
                }
                else
                {
                    // One SET per distinct entry; targets sharing an entry share the phase.
                    for (const auto &t : targets)
                    {
                        auto it = std::find_if(c.sets.begin(), c.sets.end(), [&](const SetSpec &s) {
                            return s.payload.entry_id == t.entry.entry_id && s.payload.match == t.entry.match &&
                                   s.payload.action == t.entry.action;
                        });
                        if (it == c.sets.end())
                        {
                            NodeFlags f(n);
                            f.set(t.node);
                            c.sets.push_back({f, set_payload(kFlagsTarget, t.entry)});
                        }
                        else
                            it->flags.set(t.node);
                    }
                }
                std::size_t fit = c.sets.size();
                while (fit > 0 && configuration_bound(fit, pt) > budget)
                    --fit;
                if (fit < c.sets.size())
                {
                    truncated = true;
                    c.sets.resize(fit);
                }
                for (const auto &s : c.sets)
                    for (NodeId i = 0; i < n; ++i)
                        if (s.flags.test(i))
                        {
                            flags.set(i);
                            ++participants;
                        }
                schedule = build_dissemination(static_cast<std::uint32_t>(c.sets.size()), cfg_.timing);
                break;
            }
            case OpportunityKind::Collect:
            case OpportunityKind::React:
            case OpportunityKind::Associate: {
                // The controller cannot know how many will actually speak; it provisions for all flagged.
                pair_pending = static_cast<std::uint32_t>(flags.count());
                if (kind == OpportunityKind::Collect)
                    schedule = build_collection(pair_pending, cfg_.timing, cfg_.cap_factor, cfg_.cap_slack);
                else if (kind == OpportunityKind::React)
                    schedule = build_reaction(pair_pending, cfg_.timing, cfg_.cap_factor, cfg_.cap_slack);
                else
                {
                    c.boot_flags = NodeFlags(n);
                    for (NodeId i = 0; i < n; ++i)
                        if (controller_.node_registry[i].boot_pending)
                            c.boot_flags.set(i);
                    schedule = build_association(c.boot_flags.count() > 0, pair_pending, cfg_.timing, cfg_.cap_factor,
                                                 cfg_.cap_slack);
                }
                while (schedule.max_repeats > 0 && schedule.span(schedule.max_repeats) > budget)
                    --schedule.max_repeats;
                break;
            }
            }

            c.kind = kind;
            c.stop_after_empty = schedule.stop_after_empty;
            c.ind.kind = kind;
            c.ind.epoch_seq = controller_.epoch_seq;
            c.ind.role_flags = flags;
            c.ind.phase_count = static_cast<std::uint16_t>(std::min<std::size_t>(
                0xffff, schedule.repeat ? schedule.repeat->first + 2 * schedule.max_repeats : schedule.phases.size()));
            c.ind.max_span_us = static_cast<std::uint32_t>(
                (schedule.repeat ? schedule.span(schedule.max_repeats) : schedule.prologue_end).count());
            c.ind_packet = encode_ind(c.ind);

            // Configure exchanges are opened by the controller for every target.
            if (kind == OpportunityKind::Configure)
            {
                for (const auto &s : c.sets)
                    for (NodeId i = 0; i < n; ++i)
                        if (s.flags.test(i))
                        {
                            open_exchange(i, OpportunityKind::Configure, t0);
                            controller_.node_registry[i].config_expires = t0 + cfg_.flowtable_lifetime;
                        }
            }

            auto result = execute_schedule(schedule, t0, c, hooks());

            // Close out exchanges.
            for (NodeId i = 0; i < n; ++i)
            {
                auto &ex = exchanges_[i];
                if (!ex.open)
                    continue;
                if (ex.kind == OpportunityKind::React)
                {
                    // Solicitations persist across REACT opportunities; they are abandoned only
                    // when the safety cap cut an opportunity short or the retry limit is reached.
                    if (kind != OpportunityKind::React)
                        continue;
                    ++ex.attempts;
                    bool active = c.run[i].source;
                    if ((active && result.capped) ||
                        (cfg_.react_retry_limit > 0 && ex.attempts >= cfg_.react_retry_limit))
                    {
                        fail_exchange(i);
                        nodes_[i].pending.reset();
                    }
                }
                else if (ex.kind == kind)
                    fail_exchange(i);
            }
            // Collect targets that never heard the IND still count as initiated-and-failed.
            if (kind == OpportunityKind::Collect)
                for (NodeId i = 0; i < n; ++i)
                    if (flags.test(i) && !c.run[i].heard_ind)
                    {
                        ++metrics_[i].initiated;
                        ++metrics_[i].failed;
                    }

            OpportunityRecord rec;
            rec.epoch_seq = controller_.epoch_seq;
            rec.kind = kind;
            rec.n_participants = participants;
            rec.start = t0;
            rec.span = result.span;
            rec.pairs = result.repeats;
            rec.complete = !result.capped && !truncated;
            rec.guard_allowance = result.phases.size() * cfg_.timing.guard;
            switch (kind)
            {
            case OpportunityKind::None: rec.bound = pt.t_ind; break;
            case OpportunityKind::Configure: rec.bound = configuration_bound(c.sets.size(), pt); break;
            case OpportunityKind::Collect: rec.bound = collect_bound(participants, pt); break;
            case OpportunityKind::React: rec.bound = react_bound(participants, pt); break;
            case OpportunityKind::Associate:
                rec.bound = collect_bound(participants, pt) +
                            (c.boot_flags.count() > 0 ? pt.t_ipg + flood_duration(cfg_.timing.of(PhaseKind::Boot))
                                                      : Micros{0});
                break;
            }
            rec.phases = std::move(result.phases);

            // Advance to the next epoch.
            Micros sleep{0};
            Micros next = t0;
            if (cfg_.back_to_back)
                next = t0 + result.span + cfg_.timing.ipg;
            else
            {
                sleep = epoch_sleep(result.span, cfg_.epoch);
                next = t0 + result.span + sleep;
            }
            for (NodeId i = 0; i < n; ++i)
            {
                if (!nodes_[i].synced && i != ctrl)
                    metrics_[i].radio_on += next - t0;
            }
            now_ = next;
            ++controller_.epoch_seq;
            for (auto &node : nodes_)
                if (node.synced)
                    ++node.epoch_seq_local;
            apply_drift(next - t0);

            records_.push_back(rec);
            return {std::move(rec), t0, sleep};
        }

        Topology topo_;
        WorldConfig cfg_;
        Medium medium_;
        Trace trace_;
        RandomStream workload_rng_;
        RandomStream contention_rng_;
        ControllerState controller_;
        std::vector<NodeSdnState> nodes_;
        std::vector<NodeMetrics> metrics_;
        std::vector<Exchange> exchanges_;
        std::vector<Micros> next_event_;
        std::vector<OpportunityRecord> records_;
        std::vector<RadioWindow> windows_;
        std::vector<std::optional<std::uint32_t>> hops_;
        std::uint32_t request_counter_ = 0;
        Micros now_{0};
    };
}
