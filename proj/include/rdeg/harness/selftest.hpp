#pragma once

#include <cstddef>
#include <vector>

#include "rdeg/harness/config.hpp"
#include "rdeg/harness/experiment.hpp"
#include "rdeg/invariants.hpp"

namespace rdeg::harness
{

/*!
 * Quick invariant sweep over every module; each check reports cases and
 * failures. Sizes are chosen to finish in a few seconds.
 */
inline std::vector<invariants::CheckResult> run_selftest(std::size_t workers = 1)
{
    using invariants::CheckResult;
    std::vector<CheckResult> out;
    auto append = [&](std::vector<CheckResult> v) {
        out.insert(out.end(), v.begin(), v.end());
    };

    append(invariants::check_projection(2000, 1));
    append(invariants::check_trimmed_mean(2000, 2));

    PresetParams const params;
    QuadraticGame const bilinear = make_preset(kBilinearPreset, params);
    QuadraticGame const scsc = make_preset(kScScPreset, params);
    out.push_back(invariants::check_strong_monotonicity(scsc, 2000, 3));
    out.push_back(invariants::check_smoothness(bilinear, 1000, 4));
    out.push_back(invariants::check_smoothness(scsc, 1000, 5));
    append(invariants::check_gradient_noise(bilinear, default_initial_point(bilinear), 20000, 6));

    for (QuadraticGame const* g : {&bilinear, &scsc})
    {
        CheckResult res{"gap vanishes at the saddle"};
        IteratePair const s = g->saddle_point();
        double const gap = g->primal_dual_gap(s.x, s.y);
        res.record(gap <= 1e-9, gap);
        out.push_back(res);
    }

    // Basic relations at every round of a short attacked run.
    {
        RunConfig cfg = parse_config("problem=bilinear-sec6\nrounds=500\n");
        QuadraticGame const problem = build_problem(cfg);
        Population const pop = build_population(cfg, problem);
        CheckResult res{"extra-gradient basic relations"};
        CounterStream probes(fold_key(0x6c656d31ULL, cfg.seed));
        RunOptions opts;
        opts.eta = cfg.eta;
        opts.rounds = cfg.rounds;
        opts.seed = cfg.seed;
        opts.workers = workers;
        opts.observer = [&](RoundDetail const& d) {
            invariants::check_basic_relations(problem, d, cfg.eta, 10, probes, res);
        };
        (void)run(problem, pop, build_aggregation(cfg), opts);
        out.push_back(res);
    }

    // Worker count must not change a trace.
    {
        RunConfig const cfg = parse_config("problem=bilinear-sec6\nrounds=200\n");
        CheckResult res{"trace independent of worker count"};
        std::string const one = format_trace_csv(simulate(cfg, {1, false}), cfg.rounds);
        std::string const many = format_trace_csv(simulate(cfg, {4, false}), cfg.rounds);
        res.record(one == many, 1.0);
        out.push_back(res);
    }
    return out;
}

} // namespace rdeg::harness
