#pragma once

// Scenario files, metric records, scaling sweeps and CSV emission.

#include "atomic_sim/control.hpp"

#include "json.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace atomic_sim
{
    struct GridSpec
    {
        std::size_t n = 30;
        double spacing_m = 300.0;
    };

    struct ScenarioConfig
    {
        std::uint64_t seed = 1;
        Micros duration{600'000'000};
        std::optional<GridSpec> grid = GridSpec{};
        std::filesystem::path topology_file; // used when grid is empty
        std::optional<double> prr;           // overrides every link's prr
        PathLossModel path_loss{};
        WorldConfig world{};
    };

    namespace detail
    {
        using nlohmann::json;

        inline void reject_unknown(const json &j, std::initializer_list<std::string_view> allowed, std::string_view where)
        {
            for (auto it = j.begin(); it != j.end(); ++it)
                if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
                    throw ConfigError("unknown key '" + it.key() + "' in " + std::string(where));
        }

        inline Micros positive_us(double v, const char *what, double scale)
        {
            if (!(v > 0.0))
                throw ConfigError(std::string(what) + " must be positive");
            return Micros{static_cast<std::uint64_t>(std::llround(v * scale))};
        }

        inline FloodConfig flood_from_json(const json &j, FloodConfig f)
        {
            reject_unknown(j, {"max_slots", "max_tx", "frame_bytes", "t_tx_us", "t_sw_us", "t_cal_us", "t_rs_us"},
                           "flood timing");
            f.max_slots = j.value("max_slots", f.max_slots);
            f.max_tx = j.value("max_tx", f.max_tx);
            if (j.contains("frame_bytes"))
                f.slot.t_tx = tx_time_for_frame(j.at("frame_bytes").get<std::uint64_t>());
            if (j.contains("t_tx_us"))
                f.slot.t_tx = Micros{j.at("t_tx_us").get<std::uint64_t>()};
            f.slot.t_sw = Micros{j.value("t_sw_us", f.slot.t_sw.count())};
            f.slot.t_cal = Micros{j.value("t_cal_us", f.slot.t_cal.count())};
            f.slot.t_rs = Micros{j.value("t_rs_us", f.slot.t_rs.count())};
            return f;
        }
    }

    /// Parses the "timing" object: common flood fields, per-phase overrides, gap and guard.
    inline ProtocolTiming parse_timing(const nlohmann::json &j)
    {
        using detail::json;
        ProtocolTiming t = ProtocolTiming::uniform(FloodConfig{});
        json common = json::object();
        for (auto it = j.begin(); it != j.end(); ++it)
            if (it.key() != "phases" && it.key() != "ipg_us" && it.key() != "guard_us")
                common[it.key()] = it.value();
        t.flood.fill(detail::flood_from_json(common, FloodConfig{}));
        if (j.contains("ipg_us"))
            t.ipg = Micros{j.at("ipg_us").get<std::uint64_t>()};
        if (j.contains("guard_us"))
            t.guard = Micros{j.at("guard_us").get<std::uint64_t>()};
        if (j.contains("phases"))
            for (auto it = j.at("phases").begin(); it != j.at("phases").end(); ++it)
            {
                std::optional<PhaseKind> kind;
                for (auto k : kAllPhaseKinds)
                {
                    std::string name(to_string(k));
                    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
                    if (name == it.key())
                        kind = k;
                }
                if (!kind)
                    throw ConfigError("unknown phase '" + it.key() + "' in timing.phases");
                t.of(*kind) = detail::flood_from_json(it.value(), t.of(*kind));
            }
        t.apply_aliases();
        t.validate();
        return t;
    }

    inline ProtocolTiming load_timing(const std::filesystem::path &file)
    {
        std::ifstream in(file);
        if (!in)
            throw ConfigError("cannot open timing file " + file.string());
        try
        {
            return parse_timing(nlohmann::json::parse(in));
        }
        catch (const nlohmann::json::exception &e)
        {
            throw ConfigError(std::string("timing file: ") + e.what());
        }
    }

    /// `base_dir` resolves a relative topology file.
    inline ScenarioConfig parse_scenario(const std::string &text, const std::filesystem::path &base_dir = {})
    {
        using detail::json;
        ScenarioConfig sc;
        json j;
        try
        {
            j = json::parse(text);
        }
        catch (const json::parse_error &e)
        {
            throw ConfigError(std::string("scenario parse error: ") + e.what());
        }
        try
        {
            detail::reject_unknown(j,
                                   {"name", "seed", "duration_s", "topology", "epoch_period_ms", "max_control_ms",
                                    "back_to_back", "policy", "rotation", "queue", "collect_period_s",
                                    "flowtable_lifetime_s", "drop_probability", "drift_max_ppm", "workload", "timing",
                                    "capture", "channels", "jitter_max_us", "cap_factor", "cap_slack",
                                    "react_retry_limit", "association_period", "cold_boot", "path_loss"},
                                   "scenario");
            auto &w = sc.world;
            sc.seed = j.value("seed", sc.seed);
            if (j.contains("duration_s"))
                sc.duration = detail::positive_us(j.at("duration_s").get<double>(), "duration_s", 1e6);
            if (j.contains("path_loss"))
            {
                const auto &p = j.at("path_loss");
                detail::reject_unknown(p, {"tx_power_dbm", "pl0_db", "d0_m", "gamma", "default_prr"}, "path_loss");
                sc.path_loss.tx_power_dbm = p.value("tx_power_dbm", sc.path_loss.tx_power_dbm);
                sc.path_loss.pl0_db = p.value("pl0_db", sc.path_loss.pl0_db);
                sc.path_loss.d0_m = p.value("d0_m", sc.path_loss.d0_m);
                sc.path_loss.gamma = p.value("gamma", sc.path_loss.gamma);
                sc.path_loss.default_prr = p.value("default_prr", sc.path_loss.default_prr);
            }
            if (j.contains("topology"))
            {
                const auto &t = j.at("topology");
                detail::reject_unknown(t, {"grid", "file", "prr"}, "topology");
                if (t.contains("file"))
                {
                    sc.grid.reset();
                    std::filesystem::path f = t.at("file").get<std::string>();
                    sc.topology_file = f.is_relative() && !base_dir.empty() ? base_dir / f : f;
                }
                else if (t.contains("grid"))
                {
                    const auto &g = t.at("grid");
                    detail::reject_unknown(g, {"n", "spacing_m"}, "topology.grid");
                    GridSpec gs;
                    gs.n = g.value("n", gs.n);
                    gs.spacing_m = g.value("spacing_m", gs.spacing_m);
                    if (gs.n < 1 || !(gs.spacing_m > 0.0))
                        throw ConfigError("grid needs n >= 1 and spacing_m > 0");
                    sc.grid = gs;
                }
                if (t.contains("prr"))
                    sc.prr = t.at("prr").get<double>();
            }
            if (j.contains("epoch_period_ms"))
                w.epoch.period = detail::positive_us(j.at("epoch_period_ms").get<double>(), "epoch_period_ms", 1e3);
            w.epoch.max_control = w.epoch.period;
            if (j.contains("max_control_ms"))
                w.epoch.max_control = detail::positive_us(j.at("max_control_ms").get<double>(), "max_control_ms", 1e3);
            w.back_to_back = j.value("back_to_back", w.back_to_back);
            if (j.contains("policy"))
            {
                auto p = j.at("policy").get<std::string>();
                if (p == "round_robin")
                    w.policy = PolicyKind::RoundRobin;
                else if (p == "queue")
                    w.policy = PolicyKind::Queue;
                else
                    throw ConfigError("policy must be round_robin or queue");
            }
            auto kinds = [](const json &arr) {
                std::vector<OpportunityKind> v;
                for (const auto &k : arr)
                    v.push_back(opportunity_kind_from_string(k.get<std::string>()));
                return v;
            };
            if (j.contains("rotation"))
                w.rotation = kinds(j.at("rotation"));
            if (j.contains("queue"))
                w.queue = kinds(j.at("queue"));
            if (j.contains("collect_period_s"))
                w.collect_period = detail::positive_us(j.at("collect_period_s").get<double>(), "collect_period_s", 1e6);
            if (j.contains("flowtable_lifetime_s"))
                w.flowtable_lifetime =
                    detail::positive_us(j.at("flowtable_lifetime_s").get<double>(), "flowtable_lifetime_s", 1e6);
            w.drop_probability = j.value("drop_probability", w.drop_probability);
            w.drift_max_ppm = j.value("drift_max_ppm", w.drift_max_ppm);
            if (j.contains("workload"))
            {
                const auto &wl = j.at("workload");
                detail::reject_unknown(wl, {"react", "react_rate_hz", "configure_shared"}, "workload");
                auto r = wl.value("react", std::string("poisson"));
                if (r == "poisson")
                    w.react_workload = ReactWorkload::Poisson;
                else if (r == "saturate")
                    w.react_workload = ReactWorkload::Saturate;
                else if (r == "none")
                    w.react_workload = ReactWorkload::None;
                else
                    throw ConfigError("workload.react must be poisson, saturate or none");
                w.react_rate_hz = wl.value("react_rate_hz", w.react_rate_hz);
                w.configure_shared = wl.value("configure_shared", w.configure_shared);
            }
            if (j.contains("timing"))
                w.timing = parse_timing(j.at("timing"));
            if (j.contains("capture"))
            {
                const auto &c = j.at("capture");
                detail::reject_unknown(c,
                                       {"capture_threshold_db", "preamble_window_us", "same_data_window_ns",
                                        "reception_threshold_dbm", "ideal_contention"},
                                       "capture");
                w.capture.capture_threshold_db = c.value("capture_threshold_db", w.capture.capture_threshold_db);
                if (c.contains("preamble_window_us"))
                    w.capture.preamble_window = Nanos{std::llround(c.at("preamble_window_us").get<double>() * 1000.0)};
                if (c.contains("same_data_window_ns"))
                    w.capture.same_data_window = Nanos{c.at("same_data_window_ns").get<std::int64_t>()};
                w.capture.reception_threshold_dbm = c.value("reception_threshold_dbm", w.capture.reception_threshold_dbm);
                w.capture.ideal_contention = c.value("ideal_contention", w.capture.ideal_contention);
            }
            sc.path_loss.reception_threshold_dbm = w.capture.reception_threshold_dbm;
            if (j.contains("channels"))
            {
                const auto &c = j.at("channels");
                detail::reject_unknown(c, {"pool", "association", "hop_length"}, "channels");
                if (c.contains("pool"))
                    w.channel_pool = c.at("pool").get<std::vector<Channel>>();
                if (c.contains("association"))
                    w.association_channels = c.at("association").get<std::vector<Channel>>();
                w.hop_length = c.value("hop_length", w.hop_length);
            }
            if (j.contains("jitter_max_us"))
                w.jitter_max = Nanos{std::llround(j.at("jitter_max_us").get<double>() * 1000.0)};
            w.cap_factor = j.value("cap_factor", w.cap_factor);
            w.cap_slack = j.value("cap_slack", w.cap_slack);
            w.react_retry_limit = j.value("react_retry_limit", w.react_retry_limit);
            w.association_period = j.value("association_period", w.association_period);
            if (j.contains("cold_boot"))
                w.cold_boot = j.at("cold_boot").get<std::vector<NodeId>>();
        }
        catch (const nlohmann::json::exception &e)
        {
            throw ConfigError(std::string("scenario schema error: ") + e.what());
        }
        if (sc.prr && !(*sc.prr >= 0.0 && *sc.prr <= 1.0))
            throw ConfigError("topology.prr must lie in [0,1]");
        if (!(sc.world.drop_probability >= 0.0 && sc.world.drop_probability <= 1.0))
            throw ConfigError("drop_probability must lie in [0,1]");
        return sc;
    }

    /// Reads a scenario file and applies the ATOMIC_SIM_SEED override.
    inline ScenarioConfig load_scenario(const std::filesystem::path &file)
    {
        std::ifstream in(file);
        if (!in)
            throw ConfigError("cannot open scenario file " + file.string());
        std::stringstream ss;
        ss << in.rdbuf();
        auto sc = parse_scenario(ss.str(), file.parent_path());
        if (const char *env = std::getenv("ATOMIC_SIM_SEED"))
        {
            char *end = nullptr;
            auto v = std::strtoull(env, &end, 10);
            if (end == env || *end != '\0')
                throw ConfigError("ATOMIC_SIM_SEED must be an unsigned integer");
            sc.seed = v;
        }
        return sc;
    }

    inline Topology build_topology(const ScenarioConfig &sc)
    {
        Topology t = sc.grid ? grid_topology(sc.grid->n, sc.grid->spacing_m, sc.path_loss)
                             : load_topology(sc.topology_file, sc.path_loss);
        if (sc.prr)
            t.set_all_prr(*sc.prr);
        if (!t.connected_from(t.controller()))
            throw TopologyError("topology is not connected from the controller");
        return t;
    }

    // ---------------------------------------------------------------------------------------
    // Metrics

    struct NodeSummary
    {
        NodeId node = 0;
        std::optional<std::uint32_t> hop;
        double pdr = 1.0;
        double mean_latency_us = 0.0;
        double rdc = 0.0;
        std::uint64_t initiated = 0;
        std::uint64_t completed = 0;
    };

    struct OpportunitySummary
    {
        OpportunityKind kind = OpportunityKind::None;
        std::uint32_t n_participants = 0;
        Micros span{0};
        Micros bound{0};
        Micros guard_allowance{0};
        bool complete = true;
    };

    struct MetricsRecord
    {
        std::vector<NodeSummary> nodes;
        std::vector<OpportunitySummary> opportunities;
        std::string trace;
        Micros simulated{0};
        std::uint32_t epochs = 0;
    };

    inline MetricsRecord collect_metrics(const World &w)
    {
        MetricsRecord r;
        for (NodeId i = 0; i < w.topology().size(); ++i)
        {
            const auto &m = w.metrics()[i];
            r.nodes.push_back({i, w.hop_distances()[i], m.pdr(), m.mean_latency_us(), w.rdc(i), m.initiated, m.completed});
        }
        for (const auto &o : w.opportunities())
            r.opportunities.push_back({o.kind, o.n_participants, o.span, o.bound, o.guard_allowance, o.complete});
        r.trace = w.trace().text();
        r.simulated = w.now();
        r.epochs = w.controller_state().epoch_seq;
        return r;
    }

    inline WorldConfig world_config(const ScenarioConfig &sc, bool trace)
    {
        auto wc = sc.world;
        wc.seed = sc.seed;
        wc.trace = wc.trace || trace;
        return wc;
    }

    inline MetricsRecord run_scenario(const ScenarioConfig &sc, bool trace = false)
    {
        World w(build_topology(sc), world_config(sc, trace));
        w.run_until(sc.duration);
        return collect_metrics(w);
    }

    namespace detail
    {
        inline std::string fixed(double v, int digits = 6)
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.*f", digits, v);
            return buf;
        }
    }

    inline std::string summary_csv(const MetricsRecord &r)
    {
        std::string s = "node,hop,pdr,mean_latency_us,rdc\n";
        for (const auto &n : r.nodes)
            s += std::to_string(n.node) + ',' + (n.hop ? std::to_string(*n.hop) : std::string("-1")) + ',' +
                 detail::fixed(n.pdr) + ',' + detail::fixed(n.mean_latency_us, 1) + ',' + detail::fixed(n.rdc) + '\n';
        return s;
    }

    inline std::string opportunities_csv(const MetricsRecord &r)
    {
        std::string s = "kind,n_participants,span_us,bound_us,complete\n";
        for (const auto &o : r.opportunities)
            s += std::string(to_string(o.kind)) + ',' + std::to_string(o.n_participants) + ',' +
                 std::to_string(o.span.count()) + ',' + std::to_string(o.bound.count()) + ',' +
                 (o.complete ? "1" : "0") + '\n';
        return s;
    }

    namespace detail
    {
        inline void write_file(const std::filesystem::path &p, const std::string &text)
        {
            std::ofstream out(p, std::ios::binary | std::ios::trunc);
            if (!out)
                throw std::runtime_error("cannot write " + p.string());
            out << text;
            if (!out)
                throw std::runtime_error("write failed for " + p.string());
        }
    }

    /// Writes summary.csv, opportunities.csv and (when requested) trace.log into `out`.
    inline std::vector<std::filesystem::path> emit_metrics(const MetricsRecord &r, const std::filesystem::path &out,
                                                           bool trace = false)
    {
        if (r.nodes.empty())
            throw ConfigError("no metrics to emit");
        std::error_code ec;
        std::filesystem::create_directories(out, ec);
        if (ec)
            throw std::runtime_error("cannot create " + out.string() + ": " + ec.message());
        std::vector<std::filesystem::path> files{out / "summary.csv", out / "opportunities.csv"};
        detail::write_file(files[0], summary_csv(r));
        detail::write_file(files[1], opportunities_csv(r));
        if (trace)
        {
            files.push_back(out / "trace.log");
            detail::write_file(files.back(), "time_us,node,event,slot,channel,phase\n" + r.trace);
        }
        return files;
    }

    // ---------------------------------------------------------------------------------------
    // Scaling sweep

    struct SweepRow
    {
        std::uint32_t n = 0;
        OpportunityKind kind = OpportunityKind::None;
        Micros measured_span{0};
        Micros analytic_bound{0};
        bool complete = true;
    };

    struct SweepOptions
    {
        double spacing_m = 300.0;
        std::uint64_t seed = 1;
        ProtocolTiming timing = ProtocolTiming::uniform(FloodConfig{});
        CaptureModel capture = [] {
            CaptureModel c;
            c.ideal_contention = true;
            return c;
        }();
        unsigned workers = 1;
    };

    /// Runs one worst-case opportunity of `kind` with `n` participating nodes on a lossless
    /// grid of n + 1 nodes (the extra node is the controller).
    inline SweepRow worst_case_opportunity(std::uint32_t n, OpportunityKind kind, const SweepOptions &opt,
                                           Topology topo)
    {
        topo.set_all_prr(1.0);
        WorldConfig wc;
        wc.seed = opt.seed;
        wc.timing = opt.timing;
        wc.capture = opt.capture;
        wc.react_workload = ReactWorkload::None;
        wc.policy = PolicyKind::Queue;
        const auto pt = [&] {
            auto t = opt.timing;
            t.apply_aliases();
            return t.phase_timings();
        }();
        const Micros longest = std::max({configuration_bound(n, pt), collect_bound(n, pt), react_bound(n, pt)});
        wc.epoch.period = longest + longest / 4 + Micros{1'000'000};
        wc.epoch.max_control = wc.epoch.period;
        World w(std::move(topo), wc);
        const NodeId ctrl = w.controller_id();
        EpochResult er;
        switch (kind)
        {
        case OpportunityKind::Configure: {
            std::vector<ConfigTarget> targets;
            for (NodeId i = 0; i < w.topology().size(); ++i)
                if (i != ctrl)
                {
                    FlowEntry e;
                    e.entry_id = 1u + i;
                    e.match = {static_cast<std::uint8_t>(i & 0xff), static_cast<std::uint8_t>(i >> 8)};
                    e.action = {'f', 'w', 'd'};
                    targets.push_back({i, e});
                }
            er = targets.empty() ? w.run_opportunity(OpportunityKind::None) : w.configure_nodes(targets, false);
            break;
        }
        case OpportunityKind::React:
            for (NodeId i = 0; i < w.topology().size(); ++i)
                if (i != ctrl)
                    w.node_react(i);
            er = w.run_opportunity(OpportunityKind::React);
            break;
        default:
            er = w.run_opportunity(kind);
            break;
        }
        Micros bound = kind == OpportunityKind::Configure ? configuration_bound(n, pt)
                       : kind == OpportunityKind::Collect ? collect_bound(n, pt)
                       : kind == OpportunityKind::React   ? react_bound(n, pt)
                                                          : pt.t_ind;
        return {n, kind, er.record.span, bound, er.record.complete};
    }

    /// Rows are ordered by (size, kind) as given; the result does not depend on `workers`.
    inline std::vector<SweepRow> scaling_sweep(std::span<const std::uint32_t> sizes,
                                               std::span<const OpportunityKind> kinds, const SweepOptions &opt = {})
    {
        if (sizes.empty())
            throw ConfigError("scaling_sweep needs at least one size");
        std::vector<std::pair<std::uint32_t, OpportunityKind>> jobs;
        for (auto n : sizes)
            for (auto k : kinds)
                jobs.emplace_back(n, k);
        std::vector<SweepRow> rows(jobs.size());
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(jobs.size());
        auto worker = [&] {
            for (std::size_t i = next++; i < jobs.size(); i = next++)
            {
                try
                {
                    auto [n, k] = jobs[i];
                    rows[i] = worst_case_opportunity(n, k, opt, grid_topology(n + 1, opt.spacing_m));
                }
                catch (...)
                {
                    errors[i] = std::current_exception();
                }
            }
        };
        unsigned threads = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(jobs.size())));
        std::vector<std::thread> pool;
        for (unsigned t = 1; t < threads; ++t)
            pool.emplace_back(worker);
        worker();
        for (auto &t : pool)
            t.join();
        for (auto &e : errors)
            if (e)
                std::rethrow_exception(e);
        return rows;
    }

    inline std::string sweep_csv(std::span<const SweepRow> rows)
    {
        std::string s = "n,kind,measured_span_us,analytic_bound_us\n";
        for (const auto &r : rows)
            s += std::to_string(r.n) + ',' + std::string(to_string(r.kind)) + ',' +
                 std::to_string(r.measured_span.count()) + ',' + std::to_string(r.analytic_bound.count()) + '\n';
        return s;
    }

    /// n,delta_config_us,delta_collect_us,delta_react_us for n = lo, lo+step, ..., <= hi.
    inline std::string bounds_csv(std::uint64_t lo, std::uint64_t hi, std::uint64_t step, const ProtocolTiming &t)
    {
        if (step == 0 || lo > hi)
            throw ConfigError("bounds range must satisfy min <= max and step > 0");
        auto pt = t.phase_timings();
        std::string s = "n,delta_config_us,delta_collect_us,delta_react_us\n";
        for (auto n = lo; n <= hi; n += step)
            s += std::to_string(n) + ',' + std::to_string(configuration_bound(n, pt).count()) + ',' +
                 std::to_string(collect_bound(n, pt).count()) + ',' + std::to_string(react_bound(n, pt).count()) + '\n';
        return s;
    }
}
