// atomic-sim: run scenarios, scaling sweeps and bound tables from the command line.

#include "atomic_sim/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace atomic_sim;

namespace
{
    std::vector<std::string> split(const std::string &s, char sep)
    {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s)
        {
            if (c == sep)
            {
                out.push_back(cur);
                cur.clear();
            }
            else
                cur += c;
        }
        out.push_back(cur);
        return out;
    }

    std::uint64_t to_u64(const std::string &s, const char *what)
    {
        try
        {
            std::size_t pos = 0;
            auto v = std::stoull(s, &pos);
            if (pos != s.size())
                throw std::invalid_argument(s);
            return v;
        }
        catch (const std::exception &)
        {
            throw ConfigError(std::string("bad ") + what + " '" + s + "'");
        }
    }

    PhaseSchedule schedule_for(OpportunityKind kind, std::uint32_t n, const ProtocolTiming &t)
    {
        switch (kind)
        {
        case OpportunityKind::Configure: return build_dissemination(n, t);
        case OpportunityKind::Collect: return build_collection(n, t);
        case OpportunityKind::React: return build_reaction(n, t);
        case OpportunityKind::Associate: return build_association(true, n, t);
        case OpportunityKind::None: break;
        }
        return build_dissemination(0, t);
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Deterministic simulator for flooding-based SDN control opportunities"};
    app.require_subcommand(1);

    auto *run = app.add_subcommand("run", "run a scenario and write CSV metrics");
    std::string scenario_file, out_dir = "out";
    std::optional<std::uint64_t> seed;
    bool trace = false, dump = false;
    run->add_option("--scenario", scenario_file, "scenario JSON file")->required();
    run->add_option("--seed", seed, "override the scenario seed");
    run->add_option("--out", out_dir, "output directory");
    run->add_flag("--trace", trace, "also write trace.log");
    run->add_flag("--dump-schedule", dump, "print the worst-case schedule of each rotation kind and exit");

    auto *sweep = app.add_subcommand("sweep", "worst-case opportunity spans against the analytic bounds");
    std::string sizes = "30,40,50,60,70", kinds = "collect,configure,react", sweep_out, timing_file;
    unsigned workers = 1;
    sweep->add_option("--sizes", sizes, "comma-separated participant counts");
    sweep->add_option("--kinds", kinds, "comma-separated opportunity kinds");
    sweep->add_option("--out", sweep_out, "directory for sweep.csv (stdout when omitted)");
    sweep->add_option("--timing", timing_file, "timing JSON file");
    sweep->add_option("--workers", workers, "parallel worlds");

    auto *bounds = app.add_subcommand("bounds", "tabulate the closed-form opportunity bounds");
    std::string range = "0:100:10", bounds_timing;
    bounds->add_option("--nodes", range, "min:max:step");
    bounds->add_option("--timing", bounds_timing, "timing JSON file");

    auto *sched = app.add_subcommand("schedule", "print a phase schedule");
    std::string sched_kind = "collect", sched_timing;
    std::uint32_t sched_n = 5;
    sched->add_option("--kind", sched_kind, "collect, configure, react or associate");
    sched->add_option("--n", sched_n, "targets or pending sources");
    sched->add_option("--timing", sched_timing, "timing JSON file");
    sched->add_flag("--dump-schedule", "accepted for symmetry with run");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            auto sc = load_scenario(scenario_file);
            if (seed)
                sc.seed = *seed;
            if (dump)
            {
                auto topo = build_topology(sc);
                auto n = static_cast<std::uint32_t>(topo.size() - 1);
                for (auto k : sc.world.rotation)
                {
                    std::cout << "# " << to_string(k) << " n=" << n << '\n';
                    std::cout << dump_schedule(schedule_for(k, n, sc.world.timing));
                }
                return 0;
            }
            auto rec = run_scenario(sc, trace);
            for (const auto &f : emit_metrics(rec, out_dir, trace))
                std::cout << f.string() << '\n';
            return 0;
        }
        if (*sweep)
        {
            SweepOptions opt;
            if (!timing_file.empty())
                opt.timing = load_timing(timing_file);
            opt.workers = workers;
            std::vector<std::uint32_t> ns;
            for (const auto &s : split(sizes, ','))
                ns.push_back(static_cast<std::uint32_t>(to_u64(s, "size")));
            std::vector<OpportunityKind> ks;
            for (const auto &k : split(kinds, ','))
                ks.push_back(opportunity_kind_from_string(k));
            auto csv = sweep_csv(scaling_sweep(ns, ks, opt));
            if (sweep_out.empty())
                std::cout << csv;
            else
            {
                std::filesystem::create_directories(sweep_out);
                std::ofstream(std::filesystem::path(sweep_out) / "sweep.csv") << csv;
            }
            return 0;
        }
        if (*bounds)
        {
            auto parts = split(range, ':');
            if (parts.size() != 3)
                throw ConfigError("--nodes expects min:max:step");
            auto t = bounds_timing.empty() ? ProtocolTiming::uniform(FloodConfig{}) : load_timing(bounds_timing);
            std::cout << bounds_csv(to_u64(parts[0], "min"), to_u64(parts[1], "max"), to_u64(parts[2], "step"), t);
            return 0;
        }
        if (*sched)
        {
            auto t = sched_timing.empty() ? ProtocolTiming::uniform(FloodConfig{}) : load_timing(sched_timing);
            std::cout << dump_schedule(schedule_for(opportunity_kind_from_string(sched_kind), sched_n, t));
            return 0;
        }
    }
    catch (const ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    catch (const TopologyError &e)
    {
        std::cerr << "topology error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
