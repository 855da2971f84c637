#pragma once

// Slot/flood timing and the closed-form opportunity latency bounds.

#include <array>
#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace atomic_sim
{
    /// Simulation time unit. All schedule arithmetic is exact integer microseconds.
    using Micros = std::chrono::duration<std::uint64_t, std::micro>;
    /// Sub-microsecond offsets (transmission start jitter, same-data window).
    using Nanos = std::chrono::duration<std::int64_t, std::nano>;

    inline constexpr Micros operator""_us(unsigned long long v) noexcept { return Micros{v}; }
    inline constexpr Micros operator""_ms(unsigned long long v) noexcept { return Micros{v * 1000}; }

    class ConfigError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    class BoundViolation : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /// On-air model: 250 kbit/s => 32 us per byte, plus a 6-byte synchronization header.
    inline constexpr std::uint64_t kMicrosPerByte = 32;
    inline constexpr std::uint64_t kSyncHeaderBytes = 6;

    inline constexpr Micros tx_time_for_frame(std::uint64_t frame_bytes) noexcept
    {
        return Micros{kMicrosPerByte * (kSyncHeaderBytes + frame_bytes)};
    }

    struct SlotTiming
    {
        Micros t_tx{tx_time_for_frame(32)};
        Micros t_sw{22};
        Micros t_cal{192};
        Micros t_rs{20};

        void validate() const
        {
            if (t_tx.count() == 0 || t_sw.count() == 0 || t_cal.count() == 0 || t_rs.count() == 0)
                throw ConfigError("slot timing components must be strictly positive");
        }

        friend bool operator==(const SlotTiming &, const SlotTiming &) = default;
    };

    inline constexpr Micros slot_length(const SlotTiming &s) noexcept
    {
        return s.t_tx + s.t_sw + s.t_cal + s.t_rs;
    }

    struct FloodConfig
    {
        std::uint32_t max_slots = 8;
        std::uint32_t max_tx = 3;
        SlotTiming slot{};

        void validate() const
        {
            slot.validate();
            if (max_tx < 1)
                throw ConfigError("max_tx must be >= 1");
            if (max_slots < max_tx)
                throw ConfigError("max_slots must be >= max_tx");
            if (max_slots > 255)
                throw ConfigError("max_slots must fit the 8-bit relay counter");
        }

        Micros slot_len() const noexcept { return slot_length(slot); }

        friend bool operator==(const FloodConfig &, const FloodConfig &) = default;
    };

    /// Delta_SF: the full length of one flood primitive.
    inline constexpr Micros flood_duration(const FloodConfig &c) noexcept
    {
        return Micros{c.max_slots * slot_length(c.slot).count()};
    }

    struct PhaseTimings
    {
        Micros t_ind{};
        Micros t_set{};
        Micros t_rep{};
        Micros t_ack{};
        Micros t_sol{};
        Micros t_ipg{1000};

        friend bool operator==(const PhaseTimings &, const PhaseTimings &) = default;
    };

    /// IND followed by n SET phases, each after one inter-phase gap.
    inline constexpr Micros configuration_bound(std::uint64_t n, const PhaseTimings &pt) noexcept
    {
        return pt.t_ind + n * (pt.t_ipg + pt.t_set);
    }

    /// IND followed by n productive REP/ACK pairs and 2 empty pairs that signal the stop.
    inline constexpr Micros collect_bound(std::uint64_t n, const PhaseTimings &pt) noexcept
    {
        return pt.t_ind + (n + 2) * (pt.t_ipg + pt.t_rep + pt.t_ack);
    }

    inline constexpr Micros react_bound(std::uint64_t n, const PhaseTimings &pt) noexcept
    {
        return pt.t_ind + (n + 2) * (pt.t_ipg + pt.t_sol + pt.t_set);
    }

    struct EpochConfig
    {
        Micros period{1'000'000};
        Micros max_control{1'000'000};

        void validate() const
        {
            if (period.count() == 0)
                throw ConfigError("epoch period must be positive");
            if (max_control > period)
                throw ConfigError("max_control must not exceed the epoch period");
        }
    };

    /// Sleep remainder of an epoch once the opportunity has used `op_duration`.
    inline Micros epoch_sleep(Micros op_duration, const EpochConfig &ec)
    {
        if (op_duration > ec.max_control)
            throw BoundViolation("opportunity of " + std::to_string(op_duration.count()) +
                                 " us exceeds max_control " + std::to_string(ec.max_control.count()) + " us");
        return ec.period - op_duration;
    }
}
