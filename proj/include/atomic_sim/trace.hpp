#pragma once

#include "atomic_sim/packet.hpp"
#include "atomic_sim/timing.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace atomic_sim
{
    enum class RadioEvent : std::uint8_t
    {
        Tx,
        Rx,
        Miss,
        Collision,
    };

    inline constexpr std::string_view to_string(RadioEvent e) noexcept
    {
        switch (e)
        {
        case RadioEvent::Tx: return "TX";
        case RadioEvent::Rx: return "RX";
        case RadioEvent::Miss: return "MISS";
        case RadioEvent::Collision: return "COLLISION";
        }
        return "?";
    }

    /// Radio event log, one CSV line per event: time_us,node,event,slot,channel,phase
    class Trace
    {
    public:
        explicit Trace(bool enabled = false) : enabled_(enabled) {}

        bool enabled() const noexcept { return enabled_; }

        void record(Micros time, NodeId node, RadioEvent ev, std::uint32_t slot, std::uint8_t channel, PhaseKind phase)
        {
            ++count_;
            if (!enabled_)
                return;
            text_ += std::to_string(time.count());
            text_ += ',';
            text_ += std::to_string(node);
            text_ += ',';
            text_ += to_string(ev);
            text_ += ',';
            text_ += std::to_string(slot);
            text_ += ',';
            text_ += std::to_string(channel);
            text_ += ',';
            text_ += to_string(phase);
            text_ += '\n';
        }

        const std::string &text() const noexcept { return text_; }
        std::uint64_t event_count() const noexcept { return count_; }

    private:
        bool enabled_;
        std::string text_;
        std::uint64_t count_ = 0;
    };
}
