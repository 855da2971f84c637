#pragma once

#include "atomic_sim/packet.hpp"
#include "atomic_sim/timing.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace atomic_sim
{
    struct PathLossModel
    {
        double tx_power_dbm = 0.0;
        double pl0_db = 40.0;
        double d0_m = 1.0;
        double gamma = 2.4;
        double reception_threshold_dbm = -100.0;
        double default_prr = 0.90;

        /// Log-distance path loss: tx_power - PL0 - 10 gamma log10(d / d0).
        double rssi_at(double distance_m) const
        {
            return tx_power_dbm - pl0_db - 10.0 * gamma * std::log10(std::max(distance_m, d0_m) / d0_m);
        }
    };

    struct NodePosition
    {
        NodeId id = 0;
        double x = 0.0;
        double y = 0.0;
    };

    /// Directed radio link as seen from the listener: `from` is audible at this node.
    struct InLink
    {
        NodeId from = 0;
        double rssi_dbm = 0.0;
        double prr = 1.0;
    };

    class TopologyError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    class Topology
    {
    public:
        Topology() = default;

        explicit Topology(std::vector<NodePosition> nodes) : nodes_(std::move(nodes)), in_(nodes_.size())
        {
            std::sort(nodes_.begin(), nodes_.end(), [](auto &a, auto &b) { return a.id < b.id; });
            for (std::size_t i = 0; i < nodes_.size(); ++i)
                if (nodes_[i].id != i)
                    throw TopologyError("node ids must be unique and dense from 0 (missing or duplicate id " +
                                        std::to_string(i) + ")");
        }

        std::size_t size() const noexcept { return nodes_.size(); }
        const std::vector<NodePosition> &nodes() const noexcept { return nodes_; }

        NodeId controller() const noexcept { return controller_; }
        void set_controller(NodeId id)
        {
            if (id >= size())
                throw TopologyError("controller id out of range");
            controller_ = id;
        }

        /// Adds the directed link a -> b (b hears a). Replaces an existing entry.
        void set_link(NodeId a, NodeId b, double rssi_dbm, double prr)
        {
            if (a >= size() || b >= size() || a == b)
                throw TopologyError("link endpoints invalid");
            if (!(prr >= 0.0 && prr <= 1.0))
                throw TopologyError("link prr must lie in [0,1]");
            auto &v = in_[b];
            auto it = std::find_if(v.begin(), v.end(), [&](const InLink &l) { return l.from == a; });
            if (it != v.end())
                *it = InLink{a, rssi_dbm, prr};
            else
                v.push_back(InLink{a, rssi_dbm, prr});
        }

        void set_symmetric_link(NodeId a, NodeId b, double rssi_dbm, double prr)
        {
            set_link(a, b, rssi_dbm, prr);
            set_link(b, a, rssi_dbm, prr);
        }

        void set_all_prr(double prr)
        {
            for (auto &v : in_)
                for (auto &l : v)
                    l.prr = prr;
        }

        const std::vector<InLink> &in_links(NodeId listener) const { return in_.at(listener); }

        std::optional<InLink> link(NodeId from, NodeId to) const
        {
            for (const auto &l : in_.at(to))
                if (l.from == from)
                    return l;
            return std::nullopt;
        }

        std::size_t link_count() const noexcept
        {
            std::size_t c = 0;
            for (const auto &v : in_)
                c += v.size();
            return c;
        }

        /// BFS hop distances from `root` over links with prr > 0 (directed, root transmits outward).
        std::vector<std::optional<std::uint32_t>> hop_distances(NodeId root) const
        {
            std::vector<std::vector<NodeId>> out(size());
            for (NodeId b = 0; b < size(); ++b)
                for (const auto &l : in_[b])
                    if (l.prr > 0.0)
                        out[l.from].push_back(b);
            std::vector<std::optional<std::uint32_t>> dist(size());
            std::deque<NodeId> q{root};
            dist[root] = 0;
            while (!q.empty())
            {
                auto u = q.front();
                q.pop_front();
                for (auto v : out[u])
                    if (!dist[v])
                    {
                        dist[v] = *dist[u] + 1;
                        q.push_back(v);
                    }
            }
            return dist;
        }

        bool connected_from(NodeId root) const
        {
            auto d = hop_distances(root);
            return std::all_of(d.begin(), d.end(), [](auto &x) { return x.has_value(); });
        }

    private:
        std::vector<NodePosition> nodes_;
        std::vector<std::vector<InLink>> in_;
        NodeId controller_ = 0;
    };

    /// Derives symmetric links from the path-loss model, pruning those below threshold.
    inline void derive_links(Topology &t, const PathLossModel &pl)
    {
        const auto &n = t.nodes();
        for (std::size_t i = 0; i < n.size(); ++i)
            for (std::size_t j = i + 1; j < n.size(); ++j)
            {
                double d = std::hypot(n[i].x - n[j].x, n[i].y - n[j].y);
                double rssi = pl.rssi_at(d);
                if (rssi >= pl.reception_threshold_dbm)
                    t.set_symmetric_link(n[i].id, n[j].id, rssi, pl.default_prr);
            }
    }

    inline NodeId node_nearest_centroid(const Topology &t)
    {
        double cx = 0, cy = 0;
        for (const auto &p : t.nodes())
        {
            cx += p.x;
            cy += p.y;
        }
        cx /= static_cast<double>(t.size());
        cy /= static_cast<double>(t.size());
        NodeId best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto &p : t.nodes())
        {
            double d = std::hypot(p.x - cx, p.y - cy);
            if (d < best_d - 1e-9)
            {
                best_d = d;
                best = p.id;
            }
        }
        return best;
    }

    /// Near-square grid (ceil(sqrt(n)) columns, filled row by row); the controller is the
    /// node closest to the centroid.
    inline Topology grid_topology(std::size_t count, double spacing_m, const PathLossModel &pl = {})
    {
        if (count < 1)
            throw TopologyError("grid needs at least one node");
        if (!(spacing_m > 0.0))
            throw TopologyError("grid spacing must be positive");
        auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
        std::vector<NodePosition> nodes;
        for (std::size_t i = 0; i < count; ++i)
            nodes.push_back({static_cast<NodeId>(i), static_cast<double>(i % cols) * spacing_m,
                             static_cast<double>(i / cols) * spacing_m});
        Topology t(std::move(nodes));
        derive_links(t, pl);
        t.set_controller(node_nearest_centroid(t));
        return t;
    }

    /// Line of `count` nodes with only neighbour links; controller at node 0.
    inline Topology line_topology(std::size_t count, double rssi_dbm = -70.0, double prr = 1.0)
    {
        std::vector<NodePosition> nodes;
        for (std::size_t i = 0; i < count; ++i)
            nodes.push_back({static_cast<NodeId>(i), static_cast<double>(i), 0.0});
        Topology t(std::move(nodes));
        for (std::size_t i = 1; i < count; ++i)
            t.set_symmetric_link(static_cast<NodeId>(i - 1), static_cast<NodeId>(i), rssi_dbm, prr);
        t.set_controller(0);
        return t;
    }

    namespace detail
    {
        inline std::size_t line_of_offset(const std::string &text, std::size_t offset)
        {
            offset = std::min(offset, text.size());
            return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
        }
    }

    inline Topology parse_topology(const std::string &text, const PathLossModel &pl = {})
    {
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(text);
        }
        catch (const nlohmann::json::parse_error &e)
        {
            throw TopologyError("topology parse error at line " +
                                std::to_string(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) + ": " +
                                e.what());
        }
        try
        {
            std::vector<NodePosition> nodes;
            std::map<NodeId, bool> seen;
            for (const auto &n : j.at("nodes"))
            {
                auto id = n.at("id").get<NodeId>();
                if (seen[id])
                    throw TopologyError("duplicate node id " + std::to_string(id));
                seen[id] = true;
                nodes.push_back({id, n.value("x", 0.0), n.value("y", 0.0)});
            }
            Topology t(std::move(nodes));
            if (j.contains("links"))
            {
                struct Entry
                {
                    double rssi, prr;
                    bool directed;
                };
                std::map<std::pair<NodeId, NodeId>, Entry> entries;
                for (const auto &l : j.at("links"))
                {
                    auto a = l.at("a").get<NodeId>();
                    auto b = l.at("b").get<NodeId>();
                    Entry e{l.at("rssi_dbm").get<double>(), l.at("prr").get<double>(), l.value("directed", false)};
                    if (!(e.prr >= 0.0 && e.prr <= 1.0))
                        throw TopologyError("link " + std::to_string(a) + "-" + std::to_string(b) +
                                            ": prr must lie in [0,1]");
                    auto rev = entries.find({b, a});
                    if (rev != entries.end() && !(e.directed && rev->second.directed) &&
                        (rev->second.rssi != e.rssi || rev->second.prr != e.prr))
                        throw TopologyError("asymmetric link " + std::to_string(a) + "-" + std::to_string(b) +
                                            " without the directed flag");
                    entries[{a, b}] = e;
                }
                for (const auto &[key, e] : entries)
                {
                    if (e.rssi < pl.reception_threshold_dbm)
                        continue;
                    if (e.directed)
                        t.set_link(key.first, key.second, e.rssi, e.prr);
                    else if (!entries.contains({key.second, key.first}) || key.first < key.second)
                        t.set_symmetric_link(key.first, key.second, e.rssi, e.prr);
                }
            }
            else
            {
                derive_links(t, pl);
            }
            if (j.contains("controller"))
                t.set_controller(j.at("controller").get<NodeId>());
            else
                t.set_controller(node_nearest_centroid(t));
            return t;
        }
        catch (const nlohmann::json::exception &e)
        {
            throw TopologyError(std::string("topology schema error: ") + e.what());
        }
    }

    inline Topology load_topology(const std::filesystem::path &file, const PathLossModel &pl = {})
    {
        std::ifstream in(file);
        if (!in)
            throw TopologyError("cannot open topology file " + file.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_topology(ss.str(), pl);
    }
}
