#pragma once

// Independent reference implementations used to cross-check the library.

#include "atomic_sim/medium.hpp"
#include "atomic_sim/topology.hpp"

#include <cmath>
#include <map>
#include <queue>
#include <vector>

namespace oracle
{
    using namespace atomic_sim;

    /// Plain BFS over an explicit adjacency list (prr > 0 links, from -> to).
    inline std::vector<int> bfs(const Topology &t, NodeId root)
    {
        std::vector<std::vector<NodeId>> adj(t.size());
        for (NodeId a = 0; a < t.size(); ++a)
            for (NodeId b = 0; b < t.size(); ++b)
                if (auto l = t.link(a, b); l && l->prr > 0.0)
                    adj[a].push_back(b);
        std::vector<int> d(t.size(), -1);
        std::queue<NodeId> q;
        d[root] = 0;
        q.push(root);
        while (!q.empty())
        {
            auto u = q.front();
            q.pop();
            for (auto v : adj[u])
                if (d[v] < 0)
                {
                    d[v] = d[u] + 1;
                    q.push(v);
                }
        }
        return d;
    }

    struct Verdict
    {
        enum Kind
        {
            Silence,
            Collision,
            Candidate
        } kind = Silence;
        std::uint64_t hash = 0;
        double probability = 0.0;
    };

    /// Rule-table evaluator written from the reception rules directly:
    /// audibility filter, same-data grouping anchored at the earliest member, aggregate
    /// power capture, then preamble capture.
    inline Verdict capture(const Topology &t, const CaptureModel &cm, NodeId listener, Channel ch, TimeWindow w,
                           const std::vector<Transmission> &active)
    {
        struct Sig
        {
            std::uint64_t hash;
            std::int64_t start_ns;
            double rssi, prr;
            std::size_t idx;
        };
        std::vector<Sig> s;
        for (std::size_t i = 0; i < active.size(); ++i)
        {
            const auto &tx = active[i];
            if (tx.channel != ch || tx.sender == listener)
                continue;
            if (!(tx.start < w.end && w.begin < tx.end()))
                continue;
            auto l = t.link(tx.sender, listener);
            if (!l || l->rssi_dbm < cm.reception_threshold_dbm)
                continue;
            s.push_back({tx.payload_hash, tx.start.count(), l->rssi_dbm, l->prr, i});
        }
        if (s.empty())
            return {};

        struct Group
        {
            std::uint64_t hash;
            std::int64_t anchor;
            double mw = 0.0;
            double all_fail = 1.0;
        };
        std::vector<Group> groups;
        // Visit in (start, index) order; join the first group with the same payload whose
        // anchor lies within the same-data window.
        std::vector<std::size_t> order(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) {
            return s[a].start_ns != s[b].start_ns ? s[a].start_ns < s[b].start_ns : s[a].idx < s[b].idx;
        });
        for (auto i : order)
        {
            Group *g = nullptr;
            for (auto &x : groups)
                if (x.hash == s[i].hash && s[i].start_ns - x.anchor <= cm.same_data_window.count())
                {
                    g = &x;
                    break;
                }
            if (!g)
            {
                groups.push_back({s[i].hash, s[i].start_ns});
                g = &groups.back();
            }
            g->mw += std::pow(10.0, s[i].rssi / 10.0);
            g->all_fail *= 1.0 - s[i].prr;
        }
        auto win = [](const Group &g) { return Verdict{Verdict::Candidate, g.hash, 1.0 - g.all_fail}; };
        if (groups.size() == 1)
            return win(groups[0]);
        for (std::size_t i = 0; i < groups.size(); ++i)
        {
            double rest = 0.0;
            for (std::size_t j = 0; j < groups.size(); ++j)
                if (j != i)
                    rest += groups[j].mw;
            if (10.0 * std::log10(groups[i].mw / rest) >= cm.capture_threshold_db - 1e-9)
                return win(groups[i]);
        }
        for (std::size_t i = 0; i < groups.size(); ++i)
        {
            bool leads = true;
            for (std::size_t j = 0; j < groups.size(); ++j)
                if (j != i && groups[j].anchor - groups[i].anchor < cm.preamble_window.count())
                    leads = false;
            if (leads)
                return win(groups[i]);
        }
        return {Verdict::Collision};
    }
}
