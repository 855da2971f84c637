#pragma once

#include "atomic_sim/packet.hpp"
#include "atomic_sim/rng.hpp"
#include "atomic_sim/timing.hpp"
#include "atomic_sim/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace atomic_sim
{
    using Channel = std::uint8_t;

    struct CaptureModel
    {
        double capture_threshold_db = 3.0;
        Nanos preamble_window{64'000};
        Nanos same_data_window{500};
        double reception_threshold_dbm = -100.0;
        // When neither capture rule fires between different payloads, resolve to the
        // contender with the highest per-flood initiator priority instead of colliding.
        bool ideal_contention = false;
    };

    struct Transmission
    {
        NodeId sender = 0;
        NodeId initiator = 0;
        Channel channel = 0;
        Nanos start{0};
        Micros duration{0};
        std::uint64_t payload_hash = 0;

        Nanos end() const noexcept { return start + std::chrono::duration_cast<Nanos>(duration); }
    };

    struct TimeWindow
    {
        Nanos begin{0};
        Nanos end{0};
    };

    enum class ArbitrationKind : std::uint8_t
    {
        Silence,
        Collision,
        Candidate,
    };

    /// Deterministic part of reception: which transmission (if any) the receiver locks onto
    /// and with what probability the frame then survives the link.
    struct Arbitration
    {
        ArbitrationKind kind = ArbitrationKind::Silence;
        std::size_t winner = 0; // index into the `active` span
        double success_probability = 0.0;
    };

    enum class ReceptionKind : std::uint8_t
    {
        Silence,
        Collision,
        Received,
        Missed, // arbitration produced a candidate but the link or the loss injector dropped it
    };

    struct ReceptionOutcome
    {
        ReceptionKind kind = ReceptionKind::Silence;
        std::size_t winner = 0;
    };

    inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
    inline double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

    inline std::uint64_t contention_priority(std::uint64_t nonce, NodeId initiator) noexcept
    {
        return mix64(nonce ^ (std::uint64_t{initiator} * 0x9e3779b97f4a7c15ull));
    }

    namespace detail
    {
        struct Signal
        {
            std::size_t index;
            double rssi_dbm;
            double prr;
        };

        struct Cluster
        {
            std::uint64_t hash;
            Nanos start;
            double power_mw;
            double fail_prob; // product of (1 - prr) over members
            std::size_t first_index;
            NodeId initiator;
        };
    }

    namespace detail
    {
        inline bool hearable(const Transmission &tx, NodeId listener, Channel channel, TimeWindow window)
        {
            return tx.channel == channel && tx.sender != listener && tx.start < window.end && window.begin < tx.end();
        }

        inline Arbitration arbitrate_audible(const CaptureModel &cm, std::vector<Signal> audible,
                                             std::span<const Transmission> active, std::uint64_t contention_nonce);
    }

    inline Arbitration arbitrate(const Topology &topo, const CaptureModel &cm, NodeId listener, Channel channel,
                                 TimeWindow window, std::span<const Transmission> active,
                                 std::uint64_t contention_nonce = 0)
    {
        std::vector<detail::Signal> audible;
        for (std::size_t i = 0; i < active.size(); ++i)
        {
            const auto &tx = active[i];
            if (!detail::hearable(tx, listener, channel, window))
                continue;
            auto l = topo.link(tx.sender, listener);
            if (!l || l->rssi_dbm < cm.reception_threshold_dbm)
                continue;
            audible.push_back({i, l->rssi_dbm, l->prr});
        }
        return detail::arbitrate_audible(cm, std::move(audible), active, contention_nonce);
    }

    /// Same as `arbitrate`, driven from the listener's in-links; `by_sender[node]` holds the
    /// index of that node's transmission in `active` or -1. Each sender has at most one.
    inline Arbitration arbitrate_indexed(const Topology &topo, const CaptureModel &cm, NodeId listener,
                                         Channel channel, TimeWindow window, std::span<const Transmission> active,
                                         std::span<const int> by_sender, std::uint64_t contention_nonce = 0)
    {
        std::vector<detail::Signal> audible;
        for (const auto &l : topo.in_links(listener))
        {
            int idx = by_sender[l.from];
            if (idx < 0 || l.rssi_dbm < cm.reception_threshold_dbm)
                continue;
            const auto &tx = active[static_cast<std::size_t>(idx)];
            if (!detail::hearable(tx, listener, channel, window))
                continue;
            audible.push_back({static_cast<std::size_t>(idx), l.rssi_dbm, l.prr});
        }
        return detail::arbitrate_audible(cm, std::move(audible), active, contention_nonce);
    }

    inline Arbitration detail::arbitrate_audible(const CaptureModel &cm, std::vector<Signal> audible,
                                                 std::span<const Transmission> active, std::uint64_t contention_nonce)
    {
        if (audible.empty())
            return {};

        // Same payload arriving within the same-data window combines into one signal.
        std::sort(audible.begin(), audible.end(), [&](const auto &a, const auto &b) {
            return std::pair{active[a.index].start, a.index} < std::pair{active[b.index].start, b.index};
        });
        std::vector<detail::Cluster> clusters;
        for (const auto &s : audible)
        {
            const auto &tx = active[s.index];
            auto it = std::find_if(clusters.begin(), clusters.end(), [&](const detail::Cluster &c) {
                return c.hash == tx.payload_hash && tx.start - c.start <= cm.same_data_window;
            });
            if (it == clusters.end())
                clusters.push_back({tx.payload_hash, tx.start, dbm_to_mw(s.rssi_dbm), 1.0 - s.prr, s.index, tx.initiator});
            else
            {
                it->power_mw += dbm_to_mw(s.rssi_dbm);
                it->fail_prob *= 1.0 - s.prr;
            }
        }

        auto pick = [](const detail::Cluster &c) {
            return Arbitration{ArbitrationKind::Candidate, c.first_index, 1.0 - c.fail_prob};
        };
        if (clusters.size() == 1)
            return pick(clusters.front());

        // Power capture: the strongest beats the aggregate of everything else.
        auto strongest = std::max_element(clusters.begin(), clusters.end(),
                                          [](const auto &a, const auto &b) { return a.power_mw < b.power_mw; });
        double others_mw = 0.0;
        for (auto it = clusters.begin(); it != clusters.end(); ++it)
            if (it != strongest)
                others_mw += it->power_mw;
        constexpr double kDbEpsilon = 1e-9;
        if (mw_to_dbm(strongest->power_mw) - mw_to_dbm(others_mw) >= cm.capture_threshold_db - kDbEpsilon)
            return pick(*strongest);

        // Timing capture: the earliest preamble leads every competitor by the preamble window.
        const auto &earliest = clusters.front();
        bool leads = std::all_of(clusters.begin() + 1, clusters.end(),
                                 [&](const auto &c) { return c.start - earliest.start >= cm.preamble_window; });
        if (leads)
            return pick(earliest);

        if (cm.ideal_contention)
        {
            auto best = std::max_element(clusters.begin(), clusters.end(), [&](const auto &a, const auto &b) {
                return contention_priority(contention_nonce, a.initiator) <
                       contention_priority(contention_nonce, b.initiator);
            });
            return pick(*best);
        }
        return {ArbitrationKind::Collision, 0, 0.0};
    }

    struct LossInjector
    {
        double drop_probability = 0.0;
        RandomStream stream{};

        /// True when an otherwise successful reception is dropped.
        bool drop() { return stream.uniform() < drop_probability; }
    };

    class Medium
    {
    public:
        Medium(const Topology &topo, CaptureModel cm, RandomStream link_stream, LossInjector injector)
            : topo_(&topo), capture_(cm), link_stream_(std::move(link_stream)), injector_(std::move(injector))
        {
        }

        const Topology &topology() const noexcept { return *topo_; }
        const CaptureModel &capture() const noexcept { return capture_; }
        double drop_probability() const noexcept { return injector_.drop_probability; }

        ReceptionOutcome resolve_reception(NodeId listener, Channel channel, TimeWindow window,
                                           std::span<const Transmission> active, std::uint64_t contention_nonce = 0)
        {
            return draw(arbitrate(*topo_, capture_, listener, channel, window, active, contention_nonce));
        }

        ReceptionOutcome resolve_reception_indexed(NodeId listener, Channel channel, TimeWindow window,
                                                   std::span<const Transmission> active,
                                                   std::span<const int> by_sender, std::uint64_t contention_nonce = 0)
        {
            return draw(arbitrate_indexed(*topo_, capture_, listener, channel, window, active, by_sender,
                                          contention_nonce));
        }

    private:
        ReceptionOutcome draw(const Arbitration &a)
        {
            switch (a.kind)
            {
            case ArbitrationKind::Silence:
                return {ReceptionKind::Silence, 0};
            case ArbitrationKind::Collision:
                return {ReceptionKind::Collision, 0};
            case ArbitrationKind::Candidate:
                break;
            }
            // Both draws always happen so drop settings do not shift the link stream.
            bool link_ok = link_stream_.uniform() < a.success_probability;
            bool dropped = injector_.drop();
            if (link_ok && !dropped)
                return {ReceptionKind::Received, a.winner};
            return {ReceptionKind::Missed, a.winner};
        }

        const Topology *topo_;
        CaptureModel capture_;
        RandomStream link_stream_;
        LossInjector injector_;
    };
}
