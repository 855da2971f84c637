#pragma once

// Synchronous flood primitive: back-to-back transmissions, relay-counter time sync and
// per-slot channel hopping.

#include "atomic_sim/medium.hpp"
#include "atomic_sim/packet.hpp"
#include "atomic_sim/rng.hpp"
#include "atomic_sim/timing.hpp"
#include "atomic_sim/trace.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace atomic_sim
{
    enum class FloodRole : std::uint8_t
    {
        Initiator,
        Forwarder,
        Destination,
        Sleeper,
    };

    struct HopSequence
    {
        std::uint64_t seed = 0;
        std::vector<Channel> channels;
        std::vector<Channel> association_channels;

        Channel at(std::uint32_t slot) const { return channels[slot % channels.size()]; }
    };

    /// Even positions are drawn from `channel_pool` by a stream seeded with `epoch_seq`;
    /// odd positions cycle through `association_channels` so joining nodes can park on one.
    inline HopSequence hop_sequence(std::uint64_t epoch_seq, std::span<const Channel> channel_pool,
                                    std::span<const Channel> association_channels, std::size_t length)
    {
        if (channel_pool.empty() || association_channels.empty())
            throw ConfigError("channel pools must be non-empty");
        if (length < 2)
            throw ConfigError("hop sequence length must be >= 2");
        for (auto a : association_channels)
            if (std::find(channel_pool.begin(), channel_pool.end(), a) == channel_pool.end())
                throw ConfigError("association channels must be drawn from the channel pool");
        HopSequence h;
        h.seed = epoch_seq;
        h.association_channels.assign(association_channels.begin(), association_channels.end());
        RandomStream rng(mix64(epoch_seq));
        h.channels.resize(length);
        for (std::size_t i = 0; i < length; ++i)
        {
            if (i % 2 == 0)
                h.channels[i] = channel_pool[rng.below(channel_pool.size())];
            else
                h.channels[i] = association_channels[(i / 2) % association_channels.size()];
        }
        return h;
    }

    /// Reference time of the initiator reconstructed from a reception in slot `relay_counter`.
    inline constexpr Micros synchronize(Micros rx_time, std::uint32_t relay_counter, Micros slot_len) noexcept
    {
        return rx_time - relay_counter * slot_len;
    }

    struct FloodParticipant
    {
        FloodRole role = FloodRole::Sleeper;
        std::optional<FloodPacket> packet; // initiators only
        Nanos tx_offset{0};                // initiator start offset within each slot
        // Listener parked on one channel for the whole flood (association); it never relays.
        std::optional<Channel> parked_channel;
    };

    struct FloodRun
    {
        Micros start{0};
        Micros guard{500};
        PhaseKind phase = PhaseKind::Ind;
        std::uint64_t contention_nonce = 0;
        Trace *trace = nullptr;
    };

    struct NodeFloodResult
    {
        std::optional<std::uint32_t> first_rx_slot; // equals the received relay_counter
        bool success = false;
        FloodPacket packet{}; // as received, relay_counter = reception slot
        NodeId origin = 0;    // initiator whose packet was received
        Micros rx_time{0};    // start of the reception slot
        std::uint32_t tx_count = 0;
        Micros radio_on{0};
    };

    struct RadioWindow
    {
        NodeId node = 0;
        Micros begin{0};
        Micros end{0};
        bool transmitting = false;
    };

    struct FloodOutcome
    {
        std::vector<NodeFloodResult> nodes;
        Micros duration{0};
        std::vector<RadioWindow> windows;
    };

    inline FloodOutcome run_flood(const FloodConfig &config, std::span<const FloodParticipant> participants,
                                  const HopSequence &hop, Medium &medium, const FloodRun &run)
    {
        config.validate();
        const std::size_t n = participants.size();
        if (n != medium.topology().size())
            throw ConfigError("participant list does not match topology size");

        enum class State : std::uint8_t
        {
            Off,
            Listening,
            Transmitting,
        };
        struct NodeState
        {
            State state = State::Off;
            std::uint32_t next_tx_slot = 0;
            std::uint32_t remaining = 0;
            Nanos offset{0};
            NodeId origin = 0;
        };

        std::unordered_map<NodeId, std::pair<FloodPacket, std::uint64_t>> versions;
        std::vector<NodeState> st(n);
        bool any_initiator = false;
        for (NodeId i = 0; i < n; ++i)
        {
            const auto &p = participants[i];
            switch (p.role)
            {
            case FloodRole::Initiator:
                if (!p.packet)
                    throw ConfigError("initiator without a packet");
                any_initiator = true;
                versions.emplace(i, std::pair{*p.packet, payload_digest(*p.packet)});
                st[i] = {State::Transmitting, 0, config.max_tx, p.tx_offset, i};
                break;
            case FloodRole::Forwarder:
            case FloodRole::Destination:
                st[i].state = State::Listening;
                break;
            case FloodRole::Sleeper:
                break;
            }
        }
        if (!any_initiator)
            throw ConfigError("flood has no initiator");

        FloodOutcome out;
        out.nodes.resize(n);
        const Micros slot = config.slot_len();
        const Micros t_tx = config.slot.t_tx;
        std::vector<Transmission> active;
        std::vector<int> by_sender(n, -1);
        std::optional<std::uint32_t> last_busy_slot;

        for (std::uint32_t s = 0; s < config.max_slots; ++s)
        {
            const Micros slot_start = run.start + s * slot;
            const Nanos slot_start_ns = std::chrono::duration_cast<Nanos>(slot_start);
            const Channel ch = hop.at(s);
            active.clear();
            std::fill(by_sender.begin(), by_sender.end(), -1);
            bool busy = false;

            for (NodeId i = 0; i < n; ++i)
            {
                auto &ns = st[i];
                if (ns.state != State::Transmitting || ns.next_tx_slot > s)
                    continue;
                const auto digest = versions.at(ns.origin).second;
                by_sender[i] = static_cast<int>(active.size());
                active.push_back({i, ns.origin, ch, slot_start_ns + ns.offset, t_tx, digest});
                ++out.nodes[i].tx_count;
                if (run.trace)
                    run.trace->record(slot_start, i, RadioEvent::Tx, s, ch, run.phase);
                if (--ns.remaining == 0)
                    ns.state = State::Off;
                busy = true;
            }

            const TimeWindow window{slot_start_ns, slot_start_ns + std::chrono::duration_cast<Nanos>(slot)};
            for (NodeId i = 0; i < n; ++i)
            {
                auto &ns = st[i];
                if (ns.state != State::Listening)
                    continue;
                busy = true;
                const Channel listen_ch = participants[i].parked_channel.value_or(ch);
                auto rx = medium.resolve_reception_indexed(i, listen_ch, window, active, by_sender,
                                                           run.contention_nonce);
                switch (rx.kind)
                {
                case ReceptionKind::Silence:
                    break;
                case ReceptionKind::Collision:
                    if (run.trace)
                        run.trace->record(slot_start, i, RadioEvent::Collision, s, listen_ch, run.phase);
                    break;
                case ReceptionKind::Missed:
                    if (run.trace)
                        run.trace->record(slot_start, i, RadioEvent::Miss, s, listen_ch, run.phase);
                    break;
                case ReceptionKind::Received: {
                    const auto &tx = active[rx.winner];
                    auto &res = out.nodes[i];
                    res.first_rx_slot = s;
                    res.success = true;
                    res.origin = tx.initiator;
                    res.packet = versions.at(tx.initiator).first;
                    res.packet.relay_counter = static_cast<std::uint8_t>(s);
                    res.rx_time = slot_start;
                    if (run.trace)
                        run.trace->record(slot_start, i, RadioEvent::Rx, s, listen_ch, run.phase);
                    std::uint32_t left = config.max_slots - 1 - s;
                    std::uint32_t k = std::min(config.max_tx, left);
                    if (participants[i].parked_channel || k == 0)
                    {
                        ns.state = State::Off;
                    }
                    else
                    {
                        // Relay timing is locked to the captured frame.
                        ns.state = State::Transmitting;
                        ns.next_tx_slot = s + 1;
                        ns.remaining = k;
                        ns.offset = tx.start - slot_start_ns;
                        ns.origin = tx.initiator;
                    }
                    break;
                }
                }
            }
            if (busy)
                last_busy_slot = s;
        }

        for (NodeId i = 0; i < n; ++i)
        {
            const auto &p = participants[i];
            auto &res = out.nodes[i];
            if (p.role == FloodRole::Sleeper)
                continue;
            if (p.role == FloodRole::Initiator)
            {
                Micros end = run.start + res.tx_count * slot;
                out.windows.push_back({i, run.start, end, true});
                res.radio_on = end - run.start;
                continue;
            }
            Micros listen_begin = run.start >= run.guard ? run.start - run.guard : Micros{0};
            std::uint32_t listen_slots = res.first_rx_slot ? *res.first_rx_slot + 1 : config.max_slots;
            Micros listen_end = run.start + listen_slots * slot;
            out.windows.push_back({i, listen_begin, listen_end, false});
            res.radio_on = listen_end - listen_begin;
            if (res.tx_count > 0)
            {
                Micros tx_end = listen_end + res.tx_count * slot;
                out.windows.push_back({i, listen_end, tx_end, true});
                res.radio_on += tx_end - listen_end;
            }
        }
        out.duration = last_busy_slot ? (*last_busy_slot + 1) * slot : Micros{0};
        return out;
    }

    /// Outcome of a phase in which no node initiates: every listener keeps its radio on
    /// for the whole flood and hears nothing.
    inline FloodOutcome idle_listen(const FloodConfig &config, std::span<const FloodParticipant> participants,
                                    const FloodRun &run)
    {
        FloodOutcome out;
        out.nodes.resize(participants.size());
        const Micros begin = run.start >= run.guard ? run.start - run.guard : Micros{0};
        const Micros end = run.start + flood_duration(config);
        for (NodeId i = 0; i < participants.size(); ++i)
        {
            const auto role = participants[i].role;
            if (role == FloodRole::Sleeper)
                continue;
            if (role == FloodRole::Initiator)
                throw ConfigError("idle_listen called with an initiator");
            out.windows.push_back({i, begin, end, false});
            out.nodes[i].radio_on = end - begin;
        }
        out.duration = out.windows.empty() ? Micros{0} : flood_duration(config);
        return out;
    }
}
