#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace atomic_sim
{
    enum class PhaseKind : std::uint8_t
    {
        Boot = 0,
        Ind,
        Ack,
        Nack,
        Set,
        Alert,
        Solicit,
        Report,
        Stop,
    };

    inline constexpr std::size_t kPhaseKindCount = 9;

    inline constexpr std::array<PhaseKind, kPhaseKindCount> kAllPhaseKinds{
        PhaseKind::Boot, PhaseKind::Ind, PhaseKind::Ack, PhaseKind::Nack, PhaseKind::Set,
        PhaseKind::Alert, PhaseKind::Solicit, PhaseKind::Report, PhaseKind::Stop};

    inline constexpr std::string_view to_string(PhaseKind k) noexcept
    {
        switch (k)
        {
        case PhaseKind::Boot: return "BOOT";
        case PhaseKind::Ind: return "IND";
        case PhaseKind::Ack: return "ACK";
        case PhaseKind::Nack: return "NACK";
        case PhaseKind::Set: return "SET";
        case PhaseKind::Alert: return "ALERT";
        case PhaseKind::Solicit: return "SOLICIT";
        case PhaseKind::Report: return "REPORT";
        case PhaseKind::Stop: return "STOP";
        }
        return "?";
    }

    inline std::optional<PhaseKind> phase_kind_from_byte(std::uint8_t b) noexcept
    {
        if (b >= kPhaseKindCount)
            return std::nullopt;
        return static_cast<PhaseKind>(b);
    }

    using NodeId = std::uint16_t;
    using Bytes = std::vector<std::uint8_t>;

    class DecodeError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /// Per-node bitmap carried in IND packets; bit i belongs to node i.
    class NodeFlags
    {
    public:
        NodeFlags() = default;
        explicit NodeFlags(std::size_t network_size) : bytes_((network_size + 7) / 8, 0) {}

        static NodeFlags from_bytes(Bytes b)
        {
            NodeFlags f;
            f.bytes_ = std::move(b);
            return f;
        }

        void set(NodeId id, bool on = true)
        {
            auto idx = std::size_t{id} / 8;
            if (idx >= bytes_.size())
                throw std::out_of_range("node id outside flag bitmap");
            auto mask = static_cast<std::uint8_t>(1u << (id % 8));
            bytes_[idx] = on ? (bytes_[idx] | mask) : (bytes_[idx] & ~mask);
        }

        bool test(NodeId id) const noexcept
        {
            auto idx = std::size_t{id} / 8;
            return idx < bytes_.size() && (bytes_[idx] >> (id % 8)) & 1u;
        }

        std::size_t count() const noexcept
        {
            std::size_t c = 0;
            for (auto b : bytes_)
                c += static_cast<std::size_t>(__builtin_popcount(b));
            return c;
        }

        const Bytes &bytes() const noexcept { return bytes_; }

        friend bool operator==(const NodeFlags &, const NodeFlags &) = default;

    private:
        Bytes bytes_;
    };

    struct FloodPacket
    {
        std::uint8_t relay_counter = 0;
        PhaseKind phase_type = PhaseKind::Ind;
        std::uint16_t epoch_seq = 0;
        NodeFlags flags{};
        Bytes payload{};

        friend bool operator==(const FloodPacket &, const FloodPacket &) = default;
    };

    // Wire layout (little-endian):
    // [relay_counter u8][phase_type u8][epoch_seq u16][flags_len u8][flags][payload_len u8][payload]
    inline Bytes encode(const FloodPacket &p)
    {
        const auto &flags = p.flags.bytes();
        if (flags.size() > 255 || p.payload.size() > 255)
            throw std::length_error("flags or payload longer than 255 bytes");
        Bytes out;
        out.reserve(6 + flags.size() + p.payload.size());
        out.push_back(p.relay_counter);
        out.push_back(static_cast<std::uint8_t>(p.phase_type));
        out.push_back(static_cast<std::uint8_t>(p.epoch_seq & 0xff));
        out.push_back(static_cast<std::uint8_t>(p.epoch_seq >> 8));
        out.push_back(static_cast<std::uint8_t>(flags.size()));
        out.insert(out.end(), flags.begin(), flags.end());
        out.push_back(static_cast<std::uint8_t>(p.payload.size()));
        out.insert(out.end(), p.payload.begin(), p.payload.end());
        return out;
    }

    inline FloodPacket decode(std::span<const std::uint8_t> in)
    {
        if (in.size() < 6)
            throw DecodeError("packet shorter than fixed header");
        FloodPacket p;
        p.relay_counter = in[0];
        auto kind = phase_kind_from_byte(in[1]);
        if (!kind)
            throw DecodeError("unknown phase type");
        p.phase_type = *kind;
        p.epoch_seq = static_cast<std::uint16_t>(in[2] | (in[3] << 8));
        std::size_t flags_len = in[4];
        if (in.size() < 5 + flags_len + 1)
            throw DecodeError("truncated flags");
        p.flags = NodeFlags::from_bytes(Bytes(in.begin() + 5, in.begin() + 5 + static_cast<std::ptrdiff_t>(flags_len)));
        std::size_t pos = 5 + flags_len;
        std::size_t payload_len = in[pos++];
        if (in.size() != pos + payload_len)
            throw DecodeError("payload length mismatch");
        p.payload.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.end());
        return p;
    }

    /// FNV-1a over the encoded packet minus the relay counter byte, so relays of the
    /// same packet in different slots share a digest.
    inline std::uint64_t payload_digest(const FloodPacket &p)
    {
        auto bytes = encode(p);
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (std::size_t i = 1; i < bytes.size(); ++i)
        {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
        return h;
    }

    // Little-endian field helpers used by the payload codecs.
    inline void put_u16(Bytes &b, std::uint16_t v)
    {
        b.push_back(static_cast<std::uint8_t>(v & 0xff));
        b.push_back(static_cast<std::uint8_t>(v >> 8));
    }

    inline void put_u32(Bytes &b, std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }

    class ByteReader
    {
    public:
        explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

        std::uint8_t u8()
        {
            need(1);
            return in_[pos_++];
        }

        std::uint16_t u16()
        {
            need(2);
            auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
            pos_ += 2;
            return v;
        }

        std::uint32_t u32()
        {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i)
                v |= std::uint32_t{in_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
            pos_ += 4;
            return v;
        }

        Bytes take(std::size_t n)
        {
            need(n);
            Bytes out(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
            pos_ += n;
            return out;
        }

        Bytes rest() { return take(in_.size() - pos_); }

    private:
        void need(std::size_t n) const
        {
            if (pos_ + n > in_.size())
                throw DecodeError("payload truncated");
        }

        std::span<const std::uint8_t> in_;
        std::size_t pos_ = 0;
    };
}
