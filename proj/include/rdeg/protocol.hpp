#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "rdeg/aggregation.hpp"
#include "rdeg/errors.hpp"
#include "rdeg/geometry.hpp"
#include "rdeg/problems.hpp"
#include "rdeg/random.hpp"

namespace rdeg
{

//---------------------------------------------------------------------------//
// Agents
//---------------------------------------------------------------------------//

//! Byzantine uploads are clipped to this magnitude per coordinate.
inline constexpr double kByzantineCap = 1e12;

enum class AttackKind
{
    sign_flip,
    gaussian_blast,
    constant_shift,
    collusive,
};

struct Attack
{
    AttackKind kind = AttackKind::sign_flip;
    double scale = 1.0;  //!< sign-flip multiplier or Gaussian standard deviation
    IteratePair vector;  //!< shift (constant_shift) or target point (collusive)

    static Attack sign_flip(double scale) { return {AttackKind::sign_flip, scale, {}}; }
    static Attack gaussian_blast(double stddev) { return {AttackKind::gaussian_blast, stddev, {}}; }
    static Attack constant_shift(Vec shift_x, Vec shift_y)
    {
        return {AttackKind::constant_shift, 1.0, {std::move(shift_x), std::move(shift_y)}};
    }
    static Attack collusive(IteratePair target)
    {
        return {AttackKind::collusive, 1.0, std::move(target)};
    }
};

struct AgentBehavior
{
    std::optional<Attack> attack; //!< empty for an honest agent

    bool byzantine() const noexcept { return attack.has_value(); }
};

using Population = std::vector<AgentBehavior>;

inline std::size_t byzantine_count(double alpha, std::size_t agents)
{
    // ⌊αM⌋ with slack for products such as 0.29·100 = 28.999…
    return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(agents) + 1e-9));
}

//! M agents of which the first ⌊αM⌋ run `attack`.
inline Population make_population(std::size_t agents, double alpha, Attack const& attack)
{
    std::size_t const bad = byzantine_count(alpha, agents);
    Population pop(agents);
    for (std::size_t i = 0; i < bad; ++i)
        pop[i].attack = attack;
    return pop;
}

inline std::size_t count_byzantine(Population const& pop)
{
    return static_cast<std::size_t>(
        std::count_if(pop.begin(), pop.end(), [](auto const& a) { return a.byzantine(); }));
}

template <SaddleProblem Problem>
GradientSample honest_response(Problem const& problem, IteratePair const& at,
                               CounterStream& stream)
{
    return problem.sample_gradient(at, stream);
}

//! Problems whose noise is additive can reuse one population gradient for all agents.
template <typename P>
concept AdditiveNoiseProblem = SaddleProblem<P>
                               && requires(P const& p, GradientSample g, CounterStream& s) {
                                      { p.perturb(g, s) } -> std::same_as<GradientSample>;
                                  };

//! What an attacker knows when forging an upload.
struct AttackContext
{
    IteratePair const* anchor = nullptr; //!< current iterate z_t
    double eta = 0.0;
    std::size_t agents = 0;
    std::size_t byzantine = 0;
};

inline GradientSample byzantine_response(Attack const& attack, GradientSample const& honest,
                                         AttackContext const& ctx, CounterStream& stream)
{
    GradientSample out;
    switch (attack.kind)
    {
    case AttackKind::sign_flip:
        out = {-attack.scale * honest.gx, -attack.scale * honest.gy};
        break;
    case AttackKind::gaussian_blast:
        out = {Vec(honest.gx.size()), Vec(honest.gy.size())};
        for (auto* v : {&out.gx, &out.gy})
            for (Eigen::Index j = 0; j < v->size(); ++j)
                (*v)(j) = attack.scale * stream.normal();
        break;
    case AttackKind::constant_shift:
        out = {honest.gx + attack.vector.x, honest.gy + attack.vector.y};
        break;
    case AttackKind::collusive: {
        if (!ctx.anchor || ctx.eta <= 0.0 || ctx.byzantine == 0)
            throw PreconditionError("collusive attack needs an anchor, a step size and attackers");
        // A mean-aggregated step z_t − η·[g_x; −g_y] lands on the target when the
        // attackers' share of the sum equals the whole displacement.
        double const amplify = static_cast<double>(ctx.agents)
                               / (ctx.eta * static_cast<double>(ctx.byzantine));
        out = {-(attack.vector.x - ctx.anchor->x) * amplify,
               (attack.vector.y - ctx.anchor->y) * amplify};
        break;
    }
    }
    auto cap = [](double v) {
        if (std::isnan(v))
            return 0.0;
        return std::clamp(v, -kByzantineCap, kByzantineCap);
    };
    out.gx = out.gx.unaryExpr(cap);
    out.gy = out.gy.unaryExpr(cap);
    return out;
}

//---------------------------------------------------------------------------//
// Aggregators
//---------------------------------------------------------------------------//

//! Coordinate-wise trimmed mean with a fixed or per-round agent split.
class TrimmedAggregator
{
public:
    TrimmedAggregator(TrimParams params, PartitionMode mode, std::uint64_t seed)
        : params_(params), mode_(mode), seed_(seed), fixed_(ChunkPartition::even_odd(params.agents()))
    {
    }

    TrimmedAggregator(TrimParams params, ChunkPartition partition)
        : params_(params), mode_(PartitionMode::fixed), seed_(0), fixed_(std::move(partition))
    {
        if (fixed_.agents() != params_.agents())
            throw DimensionError("partition does not match the agent count");
    }

    std::size_t agents() const noexcept { return params_.agents(); }
    TrimParams const& params() const noexcept { return params_; }

    ChunkPartition partition_for(std::size_t round) const
    {
        if (mode_ == PartitionMode::fixed)
            return fixed_;
        return ChunkPartition::shuffled(params_.agents(), seed_, round);
    }

    GradientSample operator()(Mat const& gx, Mat const& gy, std::size_t round) const
    {
        ChunkPartition const part = partition_for(round);
        return {trim_vectors(gx, params_, part), trim_vectors(gy, params_, part)};
    }

private:
    TrimParams params_;
    PartitionMode mode_;
    std::uint64_t seed_;
    ChunkPartition fixed_;
};

//! Plain average, the non-robust baseline.
struct MeanAggregator
{
    GradientSample operator()(Mat const& gx, Mat const& gy, std::size_t /*round*/) const
    {
        return {mean_vectors(gx), mean_vectors(gy)};
    }
};

//---------------------------------------------------------------------------//
// Server
//---------------------------------------------------------------------------//

struct ServerState
{
    std::size_t t = 1; //!< index of the next round
    IteratePair z;
    Vec hat_sum_x;
    Vec hat_sum_y;

    static ServerState start(IteratePair z1)
    {
        ServerState s;
        s.hat_sum_x = Vec::Zero(z1.x.size());
        s.hat_sum_y = Vec::Zero(z1.y.size());
        s.z = std::move(z1);
        return s;
    }

    std::size_t completed() const noexcept { return t - 1; }

    //! (x̄, ȳ): mean of the midpoints seen so far.
    IteratePair averaged_midpoint() const
    {
        double const k = static_cast<double>(std::max<std::size_t>(completed(), 1));
        return {hat_sum_x / k, hat_sum_y / k};
    }
};

//! Everything one extra-gradient round computed.
struct RoundDetail
{
    std::size_t t = 0;
    IteratePair z;      //!< z_t
    IteratePair z_hat;  //!< midpoint ẑ_t
    IteratePair z_next; //!< z_{t+1}
    GradientSample g_at_z;   //!< aggregated gradient at z_t
    GradientSample g_at_hat; //!< aggregated gradient at ẑ_t
    GradientSample err_at_z;   //!< aggregated − population at z_t
    GradientSample err_at_hat; //!< aggregated − population at ẑ_t
};

//! Projected descent in x, ascent in y, anchored at `from`.
template <SaddleProblem Problem>
IteratePair extragradient_step(Problem const& problem, IteratePair const& from,
                               GradientSample const& g, double eta)
{
    return {project(problem.set_x(), from.x - eta * g.gx),
            project(problem.set_y(), from.y + eta * g.gy)};
}

struct RoundContext
{
    double eta = 0.0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

namespace detail
{
template <SaddleProblem Problem>
void collect(Problem const& problem, Population const& pop, IteratePair const& at,
             IteratePair const& anchor, RoundContext const& ctx, std::size_t round,
             std::size_t query, std::size_t n_byzantine, Mat& gx, Mat& gy)
{
    auto const agents = pop.size();
    AttackContext const actx{&anchor, ctx.eta, agents, n_byzantine};
    std::optional<GradientSample> shared;
    if constexpr (AdditiveNoiseProblem<Problem>)
        shared = problem.population_gradient(at);
    auto answer = [&](std::size_t i) {
        auto stream = CounterStream::for_agent(ctx.seed, i, round, query);
        GradientSample g;
        if constexpr (AdditiveNoiseProblem<Problem>)
            g = problem.perturb(*shared, stream);
        else
            g = honest_response(problem, at, stream);
        if (pop[i].byzantine())
            g = byzantine_response(*pop[i].attack, g, actx, stream);
        gx.row(static_cast<Eigen::Index>(i)) = g.gx.transpose();
        gy.row(static_cast<Eigen::Index>(i)) = g.gy.transpose();
    };
    if (ctx.workers <= 1)
    {
        for (std::size_t i = 0; i < agents; ++i)
            answer(i);
        return;
    }
    tbb::task_arena arena(static_cast<int>(ctx.workers));
    arena.execute([&] {
        tbb::parallel_for(tbb::blocked_range<std::size_t>(0, agents),
                          [&](tbb::blocked_range<std::size_t> const& r) {
                              for (std::size_t i = r.begin(); i != r.end(); ++i)
                                  answer(i);
                          });
    });
}

inline GradientSample difference(GradientSample const& a, GradientSample const& b)
{
    return {a.gx - b.gx, a.gy - b.gy};
}

inline bool finite(IteratePair const& z) { return z.x.allFinite() && z.y.allFinite(); }
} // namespace detail

/*!
 * One extra-gradient round with an arbitrary aggregator.
 *
 * Agents answer at z_t, the aggregate drives the midpoint ẑ_t; agents answer
 * again (fresh samples) at ẑ_t and that aggregate moves z_t, not ẑ_t, to
 * z_{t+1}. The state's midpoint running sum is updated.
 */
template <SaddleProblem Problem, typename Aggregator>
RoundDetail extragradient_round(ServerState& state, Problem const& problem,
                                Population const& pop, Aggregator const& aggregate,
                                RoundContext const& ctx)
{
    auto const agents = static_cast<Eigen::Index>(pop.size());
    if (agents == 0)
        throw EmptyInputError("population is empty");
    std::size_t const t = state.t;
    std::size_t const n_bad = count_byzantine(pop);

    RoundDetail d;
    d.t = t;
    d.z = state.z;

    Mat gx(agents, static_cast<Eigen::Index>(problem.n()));
    Mat gy(agents, static_cast<Eigen::Index>(problem.m()));

    detail::collect(problem, pop, d.z, d.z, ctx, t, 0, n_bad, gx, gy);
    d.g_at_z = aggregate(gx, gy, t);
    d.z_hat = extragradient_step(problem, d.z, d.g_at_z, ctx.eta);
    if (!detail::finite(d.z_hat))
        throw NumericalAbort("non-finite midpoint in round " + std::to_string(t), t);

    detail::collect(problem, pop, d.z_hat, d.z, ctx, t, 1, n_bad, gx, gy);
    d.g_at_hat = aggregate(gx, gy, t);
    d.z_next = extragradient_step(problem, d.z, d.g_at_hat, ctx.eta);
    if (!detail::finite(d.z_next))
        throw NumericalAbort("non-finite iterate in round " + std::to_string(t), t);

    d.err_at_z = detail::difference(d.g_at_z, problem.population_gradient(d.z));
    d.err_at_hat = detail::difference(d.g_at_hat, problem.population_gradient(d.z_hat));

    state.hat_sum_x += d.z_hat.x;
    state.hat_sum_y += d.z_hat.y;
    state.z = d.z_next;
    ++state.t;
    return d;
}

template <SaddleProblem Problem>
RoundDetail rdeg_round(ServerState& state, Problem const& problem, Population const& pop,
                       TrimmedAggregator const& trim, RoundContext const& ctx)
{
    if (trim.agents() != pop.size())
        throw DimensionError("population size does not match the trimming parameters");
    return extragradient_round(state, problem, pop, trim, ctx);
}

template <SaddleProblem Problem>
RoundDetail vanilla_round(ServerState& state, Problem const& problem, Population const& pop,
                          RoundContext const& ctx)
{
    return extragradient_round(state, problem, pop, MeanAggregator{}, ctx);
}

//---------------------------------------------------------------------------//
// Runs
//---------------------------------------------------------------------------//

//! η = 1/(4L) under strong convexity, 1/(2L) otherwise.
template <SaddleProblem Problem>
double default_step_size(Problem const& problem)
{
    double const l = problem.smoothness();
    return problem.strong_convexity() > 0.0 ? 1.0 / (4.0 * l) : 1.0 / (2.0 * l);
}

//! Both blocks start at (ρ/2)·1/√d.
template <SaddleProblem Problem>
IteratePair default_initial_point(Problem const& problem)
{
    auto start = [](BallSet const& set) {
        auto const d = static_cast<Eigen::Index>(set.dim());
        return Vec::Constant(d, 0.5 * set.radius() / std::sqrt(static_cast<double>(d)));
    };
    return {start(problem.set_x()), start(problem.set_y())};
}

struct RoundRecord
{
    std::size_t t = 0;
    double gap = 0.0;     //!< φ_t at the averaged midpoints
    double dist_sq = 0.0; //!< ‖z* − z_{t+1}‖²
    double err_x_t = 0.0;
    double err_y_t = 0.0;
    double err_x_hat = 0.0;
    double err_y_hat = 0.0;
    double wall_ms = 0.0;
};

struct AbortInfo
{
    std::size_t round = 0;
    std::string message;
};

struct RunTrace
{
    std::vector<RoundRecord> records;
    IteratePair averaged; //!< (x̄_T, ȳ_T)
    IteratePair final_iterate;
    std::optional<AbortInfo> abort;
};

using Aggregation = std::variant<MeanAggregator, TrimmedAggregator>;

struct RunOptions
{
    double eta = 0.0;
    std::size_t rounds = 1;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool timing = false; //!< fill wall_ms; otherwise it stays 0 and traces are reproducible
    std::optional<IteratePair> init;
    std::function<void(RoundDetail const&)> observer;
};

/*!
 * Runs T rounds and records per-round metrics.
 *
 * A NumericalAbort stops the loop; the trace keeps the rounds completed so
 * far and the abort round.
 */
template <SaddleProblem Problem>
RunTrace run(Problem const& problem, Population const& pop, Aggregation const& aggregation,
             RunOptions const& opts)
{
    if (!(opts.eta > 0.0) || !std::isfinite(opts.eta))
        throw PreconditionError("step size must be positive and finite");
    if (opts.rounds == 0)
        throw PreconditionError("round count must be >= 1");

    IteratePair const saddle = problem.saddle_point();
    IteratePair z1 = opts.init ? *opts.init : default_initial_point(problem);
    if (!problem.set_x().contains(z1.x) || !problem.set_y().contains(z1.y))
        throw FeasibilityError("initial point outside the constraint set");

    ServerState state = ServerState::start(std::move(z1));
    RoundContext const ctx{opts.eta, opts.seed, opts.workers};
    auto const t0 = std::chrono::steady_clock::now();

    RunTrace trace;
    trace.records.reserve(opts.rounds);
    try
    {
        for (std::size_t k = 0; k < opts.rounds; ++k)
        {
            RoundDetail const d = std::visit(
                [&](auto const& agg) {
                    using A = std::decay_t<decltype(agg)>;
                    if constexpr (std::is_same_v<A, TrimmedAggregator>)
                        return rdeg_round(state, problem, pop, agg, ctx);
                    else
                        return vanilla_round(state, problem, pop, ctx);
                },
                aggregation);
            if (opts.observer)
                opts.observer(d);

            IteratePair const avg = state.averaged_midpoint();
            RoundRecord r;
            r.t = d.t;
            r.gap = problem.primal_dual_gap(avg.x, avg.y);
            r.dist_sq = pair_distance_sq(saddle, d.z_next);
            r.err_x_t = d.err_at_z.gx.norm();
            r.err_y_t = d.err_at_z.gy.norm();
            r.err_x_hat = d.err_at_hat.gx.norm();
            r.err_y_hat = d.err_at_hat.gy.norm();
            if (opts.timing)
            {
                r.wall_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            }
            if (!std::isfinite(r.gap) || !std::isfinite(r.dist_sq))
                throw NumericalAbort("non-finite metric in round " + std::to_string(d.t), d.t);
            trace.records.push_back(r);
        }
    }
    catch (NumericalAbort const& e)
    {
        trace.abort = AbortInfo{e.round(), e.what()};
    }
    trace.averaged = state.averaged_midpoint();
    trace.final_iterate = state.z;
    return trace;
}

//! Mean gap over the final ⌈T/10⌉ recorded rounds.
inline double error_floor(RunTrace const& trace)
{
    auto const& r = trace.records;
    if (r.empty())
        return std::nan("");
    std::size_t const tail = std::max<std::size_t>(1, (r.size() + 9) / 10);
    double sum = 0.0;
    for (std::size_t i = r.size() - tail; i < r.size(); ++i)
        sum += r[i].gap;
    return sum / static_cast<double>(tail);
}

//! Mean dist_sq over the final ⌈T/10⌉ recorded rounds.
inline double dist_floor(RunTrace const& trace)
{
    auto const& r = trace.records;
    if (r.empty())
        return std::nan("");
    std::size_t const tail = std::max<std::size_t>(1, (r.size() + 9) / 10);
    double sum = 0.0;
    for (std::size_t i = r.size() - tail; i < r.size(); ++i)
        sum += r[i].dist_sq;
    return sum / static_cast<double>(tail);
}

} // namespace rdeg
