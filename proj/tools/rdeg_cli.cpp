// Command-line front end: run, sweep, selftest.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <tbb/global_control.h>
#include <tbb/info.h>

#include "rdeg/errors.hpp"
#include "rdeg/harness/config.hpp"
#include "rdeg/harness/experiment.hpp"
#include "rdeg/harness/selftest.hpp"
#include "rdeg/version.hpp"

namespace
{

enum ExitCode
{
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kNumerical = 3,
    kIo = 4,
};

std::string read_text(std::string const& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw rdeg::IoError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

rdeg::harness::RunConfig load_config(std::string const& path)
{
    try
    {
        return rdeg::harness::parse_config(read_text(path));
    }
    catch (rdeg::ConfigError const& e)
    {
        throw rdeg::ConfigError(path + ": " + e.what());
    }
}

} // namespace

int main(int argc, char** argv)
{
    using namespace rdeg::harness;

    CLI::App app{"Robust distributed extra-gradient experiments"};
    app.set_version_flag("--version", std::string(rdeg::kVersion));
    app.require_subcommand(1);

    std::size_t workers = 1;
    bool timing = false;

    std::string run_config;
    std::optional<std::uint64_t> run_seed;
    std::string run_out = "out";
    auto* run_cmd = app.add_subcommand("run", "run one experiment");
    run_cmd->add_option("--config", run_config, "key=value config file")->required();
    run_cmd->add_option("--seed", run_seed, "override the config seed");
    run_cmd->add_option("--out", run_out, "output directory")->capture_default_str();
    run_cmd->add_option("--workers", workers, "threads answering agent queries")
        ->check(CLI::PositiveNumber);
    run_cmd->add_flag("--timing", timing, "fill wall_ms (makes traces non-reproducible)");

    std::string sweep_config;
    std::string sweep_param;
    std::string sweep_values;
    std::size_t sweep_trials = 1;
    std::string sweep_out = "sweep";
    auto* sweep_cmd = app.add_subcommand("sweep", "sweep one parameter over several trials");
    sweep_cmd->add_option("--config", sweep_config, "base config file")->required();
    sweep_cmd->add_option("--param", sweep_param, "alpha|agents|sigma2")
        ->required()
        ->check(CLI::IsMember({"alpha", "agents", "sigma2"}));
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep_cmd->add_option("--trials", sweep_trials, "trials per value (seeds seed..seed+K-1)")
        ->capture_default_str();
    sweep_cmd->add_option("--out", sweep_out, "output directory")->capture_default_str();
    sweep_cmd->add_option("--workers", workers, "concurrent runs")->check(CLI::PositiveNumber);

    auto* selftest_cmd = app.add_subcommand("selftest", "run the invariant checks");
    selftest_cmd->add_option("--workers", workers, "threads for the protocol checks")
        ->check(CLI::PositiveNumber);

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        int const rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    // Allow more threads than cores when asked; results do not depend on it.
    tbb::global_control parallelism(
        tbb::global_control::max_allowed_parallelism,
        std::max<std::size_t>(workers, static_cast<std::size_t>(tbb::info::default_concurrency())));

    try
    {
        if (*run_cmd)
        {
            RunConfig cfg = load_config(run_config);
            if (run_seed)
                cfg.seed = *run_seed;
            ExperimentResult const res = run_experiment(cfg, run_out, {workers, timing});
            auto const& s = res.summary;
            std::cout << "final_gap=" << s["final_gap"].dump()
                      << " final_dist_sq=" << s["final_dist_sq"].dump()
                      << " error_floor=" << s["error_floor"].dump() << '\n'
                      << "wrote " << run_out << "/trace.csv and " << run_out << "/summary.json\n";
            if (res.trace.abort)
            {
                std::cerr << "numerical abort at round " << res.trace.abort->round << ": "
                          << res.trace.abort->message << '\n';
                return kNumerical;
            }
            return kOk;
        }
        if (*sweep_cmd)
        {
            SweepSpec spec;
            spec.base = load_config(sweep_config);
            spec.param = parse_sweep_param(sweep_param);
            spec.values = parse_value_list(sweep_values);
            spec.trials = sweep_trials;
            SweepResult const res = run_sweep(spec, sweep_out, {workers, false});
            auto const& rep = res.report;
            for (std::size_t i = 0; i < rep.values.size(); ++i)
            {
                std::cout << sweep_param << '=' << format_double(rep.values[i])
                          << " median_error_floor=" << format_double(rep.medians[i]) << '\n';
            }
            std::cout << "expected "
                      << (rep.expected == Direction::nondecreasing ? "nondecreasing"
                                                                   : "nonincreasing")
                      << ": monotone=" << (rep.monotone ? "yes" : "no")
                      << " strict_extremes=" << (rep.strict_extremes ? "yes" : "no") << '\n'
                      << "wrote " << sweep_out << "/sweep.csv and " << sweep_out
                      << "/sweep_report.json\n";
            for (auto const& r : res.rows)
                if (r.aborted)
                    return kNumerical;
            return kOk;
        }
        if (*selftest_cmd)
        {
            bool all = true;
            for (auto const& r : run_selftest(workers))
            {
                std::printf("%s  %-40s cases=%zu failures=%zu\n", r.passed() ? "PASS" : "FAIL",
                            r.name.c_str(), r.cases, r.failures);
                all = all && r.passed();
            }
            return all ? kOk : kFailure;
        }
    }
    catch (rdeg::ConfigError const& e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    }
    catch (rdeg::IoError const& e)
    {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    }
    catch (rdeg::NumericalAbort const& e)
    {
        std::cerr << "numerical abort at round " << e.round() << ": " << e.what() << '\n';
        return kNumerical;
    }
    catch (std::exception const& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
