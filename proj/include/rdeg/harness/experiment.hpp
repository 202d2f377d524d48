#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "rdeg/errors.hpp"
#include "rdeg/harness/config.hpp"
#include "rdeg/protocol.hpp"
#include "rdeg/version.hpp"

namespace rdeg::harness
{

//! How to execute, as opposed to what to compute; never changes results.
struct ExecOptions
{
    std::size_t workers = 1;
    bool timing = false;
};

//---------------------------------------------------------------------------//
// Assembly
//---------------------------------------------------------------------------//

inline std::optional<Attack> build_attack(RunConfig const& cfg, QuadraticGame const& problem)
{
    auto const n = static_cast<Eigen::Index>(problem.n());
    auto const m = static_cast<Eigen::Index>(problem.m());
    double const s = cfg.attack_scale;
    switch (cfg.attack)
    {
    case AttackName::none: return std::nullopt;
    case AttackName::signflip: return Attack::sign_flip(s);
    case AttackName::gaussian: return Attack::gaussian_blast(s);
    case AttackName::shift: return Attack::constant_shift(Vec::Constant(n, s), Vec::Constant(m, s));
    case AttackName::collusive:
        return Attack::collusive({Vec::Constant(n, s), Vec::Constant(m, s)});
    }
    return std::nullopt;
}

inline Population build_population(RunConfig const& cfg, QuadraticGame const& problem)
{
    auto const attack = build_attack(cfg, problem);
    if (!attack)
        return Population(cfg.agents);
    return make_population(cfg.agents, cfg.alpha, *attack);
}

inline Aggregation build_aggregation(RunConfig const& cfg)
{
    if (cfg.algo == Algo::vanilla)
        return MeanAggregator{};
    return TrimmedAggregator(build_trim_params(cfg), cfg.partition_mode, cfg.seed);
}

//! Runs the configured protocol without touching the filesystem.
inline RunTrace simulate(RunConfig const& cfg, ExecOptions const& exec = {})
{
    QuadraticGame const problem = build_problem(cfg);
    Population const pop = build_population(cfg, problem);
    RunOptions opts;
    opts.eta = cfg.eta;
    opts.rounds = cfg.rounds;
    opts.seed = cfg.seed;
    opts.workers = exec.workers;
    opts.timing = exec.timing;
    return run(problem, pop, build_aggregation(cfg), opts);
}

//---------------------------------------------------------------------------//
// Output
//---------------------------------------------------------------------------//

inline constexpr char const* kTraceHeader
    = "t,gap,dist_sq,err_x_t,err_y_t,err_x_hat,err_y_hat,wall_ms";

/*!
 * trace.csv body. Always `rounds` data rows; rounds after an abort carry
 * "nan" in every metric column.
 */
inline std::string format_trace_csv(RunTrace const& trace, std::size_t rounds)
{
    std::string out = kTraceHeader;
    out += '\n';
    auto field = [&](double v) {
        out += ',';
        out += format_double(v);
    };
    for (auto const& r : trace.records)
    {
        out += std::to_string(r.t);
        for (double v : {r.gap, r.dist_sq, r.err_x_t, r.err_y_t, r.err_x_hat, r.err_y_hat,
                         r.wall_ms})
            field(v);
        out += '\n';
    }
    double const nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t t = trace.records.size() + 1; t <= rounds; ++t)
    {
        out += std::to_string(t);
        for (int k = 0; k < 7; ++k)
            field(nan);
        out += '\n';
    }
    return out;
}

inline nlohmann::json config_json(RunConfig const& cfg)
{
    nlohmann::json j;
    j["problem"] = cfg.problem;
    j["algo"] = std::string(to_string(cfg.algo));
    j["agents"] = cfg.agents;
    j["alpha"] = cfg.alpha;
    j["alpha_regime"] = to_string(cfg.alpha_regime);
    j["delta"] = cfg.delta;
    j["sigma2"] = cfg.sigma2;
    j["eta"] = cfg.eta;
    j["rounds"] = cfg.rounds;
    j["seed"] = cfg.seed;
    j["attack"] = std::string(to_string(cfg.attack));
    j["attack_scale"] = cfg.attack_scale;
    j["partition_mode"] = std::string(to_string(cfg.partition_mode));
    j["trim_policy"] = std::string(to_string(cfg.trim_policy));
    j["epsilon_cap"] = cfg.epsilon_cap ? nlohmann::json(*cfg.epsilon_cap) : nlohmann::json("auto");
    j["dim"] = cfg.preset.dim;
    j["rho"] = cfg.preset.rho;
    j["problem_seed"] = cfg.preset.problem_seed;
    if (cfg.mu)
        j["mu"] = *cfg.mu;
    return j;
}

// JSON has no NaN; absent values become null.
inline nlohmann::json number_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json make_summary(RunConfig const& cfg, RunTrace const& trace)
{
    QuadraticGame const problem = build_problem(cfg);
    nlohmann::json s;
    double const nan = std::numeric_limits<double>::quiet_NaN();
    s["final_gap"] = number_or_null(trace.records.empty() ? nan : trace.records.back().gap);
    s["final_dist_sq"]
        = number_or_null(trace.records.empty() ? nan : trace.records.back().dist_sq);
    s["error_floor"] = number_or_null(error_floor(trace));
    s["dist_floor"] = number_or_null(dist_floor(trace));
    s["rounds_completed"] = trace.records.size();
    if (trace.abort)
        s["abort"] = {{"round", trace.abort->round}, {"message", trace.abort->message}};
    else
        s["abort"] = nullptr;

    nlohmann::json derived;
    derived["smoothness"] = problem.smoothness();
    derived["strong_convexity"] = problem.strong_convexity();
    derived["sigma"] = problem.sigma();
    derived["diameter"] = problem.diameter();
    derived["byzantine_agents"] = cfg.attack == AttackName::none
                                      ? std::size_t{0}
                                      : byzantine_count(cfg.alpha, cfg.agents);
    if (cfg.algo == Algo::rdeg)
    {
        TrimParams const tp = build_trim_params(cfg);
        derived["epsilon"] = tp.epsilon();
        derived["formula_epsilon"] = tp.formula_epsilon();
    }
    s["derived"] = derived;
    s["config"] = config_json(cfg);
    s["config_text"] = to_config_text(cfg);
    s["version"] = std::string(kVersion);
    return s;
}

inline void write_file(std::filesystem::path const& path, std::string const& content)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    os.close();
    if (!os)
        throw IoError("failed writing " + path.string());
}

inline void ensure_directory(std::filesystem::path const& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

struct ExperimentResult
{
    RunTrace trace;
    nlohmann::json summary;
};

/*!
 * Runs one experiment and writes trace.csv and summary.json into `out_dir`.
 *
 * A numerical abort is not an exception here: it is recorded in the trace
 * and in summary["abort"].
 */
inline ExperimentResult run_experiment(RunConfig const& cfg, std::filesystem::path const& out_dir,
                                       ExecOptions const& exec = {})
{
    ensure_directory(out_dir);
    ExperimentResult res;
    res.trace = simulate(cfg, exec);
    res.summary = make_summary(cfg, res.trace);
    write_file(out_dir / "trace.csv", format_trace_csv(res.trace, cfg.rounds));
    write_file(out_dir / "summary.json", res.summary.dump(2) + "\n");
    return res;
}

//---------------------------------------------------------------------------//
// Sweeps
//---------------------------------------------------------------------------//

struct SweepRow
{
    double value = 0.0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double error_floor = 0.0;
    double final_dist_sq = 0.0;
    bool aborted = false;
};

enum class Direction
{
    nondecreasing,
    nonincreasing,
};

//! Direction in which the floor is expected to move as the swept value grows.
inline Direction expected_direction(SweepParam p)
{
    return p == SweepParam::agents ? Direction::nonincreasing : Direction::nondecreasing;
}

struct MonotonicityReport
{
    Direction expected = Direction::nondecreasing;
    std::vector<double> values;  //!< ascending
    std::vector<double> medians; //!< median error floor per value
    bool monotone = false;
    bool strict_extremes = false; //!< first and last medians differ in the expected direction
};

inline double median(std::vector<double> v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    std::size_t const k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline MonotonicityReport monotonicity(std::vector<SweepRow> const& rows, SweepParam param)
{
    MonotonicityReport rep;
    rep.expected = expected_direction(param);
    for (auto const& r : rows)
        if (std::find(rep.values.begin(), rep.values.end(), r.value) == rep.values.end())
            rep.values.push_back(r.value);
    std::sort(rep.values.begin(), rep.values.end());
    for (double v : rep.values)
    {
        std::vector<double> floors;
        for (auto const& r : rows)
            if (r.value == v)
                floors.push_back(r.error_floor);
        rep.medians.push_back(median(std::move(floors)));
    }
    auto ordered = [&](double a, double b) {
        return rep.expected == Direction::nondecreasing ? a <= b : a >= b;
    };
    rep.monotone = true;
    for (std::size_t i = 1; i < rep.medians.size(); ++i)
        rep.monotone = rep.monotone && ordered(rep.medians[i - 1], rep.medians[i]);
    if (rep.medians.size() >= 2)
    {
        double const lo = rep.medians.front();
        double const hi = rep.medians.back();
        rep.strict_extremes = rep.expected == Direction::nondecreasing ? lo < hi : lo > hi;
    }
    return rep;
}

struct SweepResult
{
    std::vector<SweepRow> rows; //!< value-major, in the order the values were given
    MonotonicityReport report;
};

/*!
 * Runs every (value, trial) pair; trial k uses seed + k.
 *
 * Runs are independent and each writes only its own slot, so they are spread
 * over `exec.workers` threads without affecting the output.
 */
inline SweepResult run_sweep(SweepSpec const& spec, ExecOptions const& exec = {})
{
    validate(spec);
    std::vector<RunConfig> cfgs;
    std::vector<SweepRow> rows;
    for (double v : spec.values)
    {
        RunConfig const derived = derive_config(spec.base, spec.param, v);
        for (std::size_t k = 0; k < spec.trials; ++k)
        {
            RunConfig c = derived;
            c.seed = spec.base.seed + k;
            cfgs.push_back(c);
            rows.push_back({v, k, c.seed, 0.0, 0.0, false});
        }
    }

    auto one = [&](std::size_t i) {
        RunTrace const trace = simulate(cfgs[i]);
        rows[i].error_floor = error_floor(trace);
        rows[i].final_dist_sq = trace.records.empty() || trace.abort
                                    ? std::numeric_limits<double>::quiet_NaN()
                                    : trace.records.back().dist_sq;
        rows[i].aborted = trace.abort.has_value();
        if (trace.abort)
            rows[i].error_floor = std::numeric_limits<double>::quiet_NaN();
    };
    if (exec.workers <= 1)
    {
        for (std::size_t i = 0; i < cfgs.size(); ++i)
            one(i);
    }
    else
    {
        tbb::task_arena arena(static_cast<int>(exec.workers));
        arena.execute([&] { tbb::parallel_for(std::size_t{0}, cfgs.size(), one); });
    }

    SweepResult res;
    res.report = monotonicity(rows, spec.param);
    res.rows = std::move(rows);
    return res;
}

inline std::string format_sweep_csv(SweepResult const& res, SweepParam param)
{
    std::string out = std::string(to_string(param)) + ",trial,seed,error_floor,final_dist_sq\n";
    for (auto const& r : res.rows)
    {
        out += format_double(r.value) + ',' + std::to_string(r.trial) + ','
               + std::to_string(r.seed) + ',' + format_double(r.error_floor) + ','
               + format_double(r.final_dist_sq) + '\n';
    }
    return out;
}

inline nlohmann::json report_json(SweepSpec const& spec, SweepResult const& res)
{
    nlohmann::json j;
    j["param"] = std::string(to_string(spec.param));
    j["expected"] = res.report.expected == Direction::nondecreasing ? "nondecreasing"
                                                                    : "nonincreasing";
    j["trials"] = spec.trials;
    nlohmann::json medians = nlohmann::json::array();
    for (std::size_t i = 0; i < res.report.values.size(); ++i)
    {
        medians.push_back({{"value", res.report.values[i]},
                           {"median_error_floor", number_or_null(res.report.medians[i])}});
    }
    j["medians"] = medians;
    j["monotone"] = res.report.monotone;
    j["strict_extremes"] = res.report.strict_extremes;
    std::size_t aborted = 0;
    for (auto const& r : res.rows)
        aborted += r.aborted ? 1 : 0;
    j["aborted_runs"] = aborted;
    j["base_config_text"] = to_config_text(spec.base);
    j["version"] = std::string(kVersion);
    return j;
}

//! Runs the sweep and writes sweep.csv and sweep_report.json into `out_dir`.
inline SweepResult run_sweep(SweepSpec const& spec, std::filesystem::path const& out_dir,
                             ExecOptions const& exec = {})
{
    validate(spec);
    ensure_directory(out_dir);
    SweepResult res = run_sweep(spec, exec);
    write_file(out_dir / "sweep.csv", format_sweep_csv(res, spec.param));
    write_file(out_dir / "sweep_report.json", report_json(spec, res).dump(2) + "\n");
    return res;
}

} // namespace rdeg::harness
