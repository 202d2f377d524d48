#include <cmath>
#include <limits>

#include <gtest/gtest.h>
#include <tbb/global_control.h>

#include "rdeg/invariants.hpp"
#include "rdeg/protocol.hpp"

using namespace rdeg;

namespace
{
Vec v1(double a)
{
    return Vec::Constant(1, a);
}

QuadraticGame xy_game(double sigma2 = 0.0)
{
    return make_bilinear(Mat::Identity(1, 1), v1(0.0), v1(0.0), 10.0, sigma2);
}

Population honest(std::size_t m)
{
    return Population(m);
}

TrimParams loose(std::size_t m)
{
    return TrimParams::capped(0.0, 0.5, m);
}

// Quadratic game whose sampled gradients turn NaN near the origin.
class FaultyGame
{
public:
    FaultyGame(QuadraticGame g, double radius) : g_(std::move(g)), radius_(radius) {}

    std::size_t n() const { return g_.n(); }
    std::size_t m() const { return g_.m(); }
    BallSet set_x() const { return g_.set_x(); }
    BallSet set_y() const { return g_.set_y(); }
    double smoothness() const { return g_.smoothness(); }
    double strong_convexity() const { return g_.strong_convexity(); }
    double sigma() const { return g_.sigma(); }
    GradientSample sample_gradient(IteratePair const& z, CounterStream& s) const
    {
        auto g = g_.sample_gradient(z, s);
        if (z.x.norm() < radius_)
            g.gx(0) = std::numeric_limits<double>::quiet_NaN();
        return g;
    }
    GradientSample population_gradient(IteratePair const& z) const
    {
        return g_.population_gradient(z);
    }
    double primal_dual_gap(Vec const& x, Vec const& y) const { return g_.primal_dual_gap(x, y); }
    IteratePair saddle_point() const { return g_.saddle_point(); }

private:
    QuadraticGame g_;
    double radius_;
};
static_assert(SaddleProblem<FaultyGame>);
static_assert(!AdditiveNoiseProblem<FaultyGame>);
} // namespace

//---------------------------------------------------------------------------//
// Agents
//---------------------------------------------------------------------------//

TEST(Population, ByzantineCount)
{
    EXPECT_EQ(byzantine_count(0.06, 100), 6u);
    EXPECT_EQ(byzantine_count(0.29, 100), 29u);
    EXPECT_EQ(byzantine_count(0.0, 100), 0u);
    EXPECT_EQ(byzantine_count(0.05, 10), 0u);
    auto const pop = make_population(100, 0.06, Attack::sign_flip(3.0));
    EXPECT_EQ(count_byzantine(pop), 6u);
    EXPECT_TRUE(pop[5].byzantine());
    EXPECT_FALSE(pop[6].byzantine());
}

TEST(ByzantineResponse, SignFlipAndShift)
{
    GradientSample const g{(Vec(2) << 1.0, -2.0).finished(), (Vec(2) << 0.5, 3.0).finished()};
    CounterStream s(1);
    AttackContext const ctx;
    auto const flip = byzantine_response(Attack::sign_flip(1.0), g, ctx, s);
    EXPECT_EQ(flip.gx, -g.gx);
    EXPECT_EQ(flip.gy, -g.gy);
    auto const flip3 = byzantine_response(Attack::sign_flip(3.0), g, ctx, s);
    EXPECT_EQ(flip3.gx, -3.0 * g.gx);

    auto const same
        = byzantine_response(Attack::constant_shift(Vec::Zero(2), Vec::Zero(2)), g, ctx, s);
    EXPECT_EQ(same.gx, g.gx);
    EXPECT_EQ(same.gy, g.gy);
    auto const moved = byzantine_response(
        Attack::constant_shift(Vec::Constant(2, 1.0), Vec::Constant(2, -1.0)), g, ctx, s);
    EXPECT_EQ(moved.gx, g.gx + Vec::Constant(2, 1.0));
    EXPECT_EQ(moved.gy, g.gy - Vec::Constant(2, 1.0));
}

TEST(ByzantineResponse, GaussianBlastStatistics)
{
    GradientSample const g{Vec::Constant(4, 7.0), Vec::Constant(4, 7.0)};
    CounterStream s(2);
    double sum = 0.0;
    double sq = 0.0;
    int const n = 20000;
    for (int k = 0; k < n; ++k)
    {
        auto const b = byzantine_response(Attack::gaussian_blast(50.0), g, {}, s);
        sum += b.gx.sum() + b.gy.sum();
        sq += b.gx.squaredNorm() + b.gy.squaredNorm();
    }
    double const count = 8.0 * n;
    EXPECT_NEAR(sum / count, 0.0, 5.0 * 50.0 / std::sqrt(count));
    EXPECT_NEAR(std::sqrt(sq / count), 50.0, 1.0);
}

TEST(ByzantineResponse, CappedAndNanFree)
{
    GradientSample const g{Vec::Constant(2, 1e300), Vec::Constant(2, std::nan(""))};
    CounterStream s(3);
    auto const b = byzantine_response(Attack::sign_flip(10.0), g, {}, s);
    EXPECT_EQ(b.gx(0), -kByzantineCap);
    EXPECT_EQ(b.gy(0), 0.0);
}

TEST(ByzantineResponse, CollusiveLandsOnTarget)
{
    auto const game = make_preset(kBilinearPreset, {});
    IteratePair const target{Vec::Constant(10, 20.0), Vec::Constant(10, -15.0)};
    auto const pop = make_population(8, 1.0, Attack::collusive(target));
    ASSERT_EQ(count_byzantine(pop), 8u);
    ServerState state = ServerState::start(default_initial_point(game));
    RoundContext const ctx{0.3, 5, 1};
    auto const d = vanilla_round(state, game, pop, ctx);
    EXPECT_LE((d.z_hat.x - target.x).norm(), 1e-9);
    EXPECT_LE((d.z_hat.y - target.y).norm(), 1e-9);
    EXPECT_LE(std::sqrt(pair_distance_sq(d.z_next, target)), 1e-9);
}

TEST(ByzantineResponse, CollusiveNeedsContext)
{
    CounterStream s(4);
    GradientSample const g{v1(1.0), v1(1.0)};
    EXPECT_THROW(byzantine_response(Attack::collusive({v1(0.0), v1(0.0)}), g, {}, s),
                 PreconditionError);
}

//---------------------------------------------------------------------------//
// Rounds
//---------------------------------------------------------------------------//

TEST(Round, HandExecutedBilinear)
{
    auto const game = xy_game();
    ServerState state = ServerState::start({v1(1.0), v1(1.0)});
    RoundContext const ctx{0.1, 0, 1};
    auto const d = rdeg_round(state, game, honest(2), TrimmedAggregator(loose(2), PartitionMode::fixed, 0), ctx);
    EXPECT_NEAR(d.z_hat.x(0), 0.9, 1e-15);
    EXPECT_NEAR(d.z_hat.y(0), 1.1, 1e-15);
    EXPECT_NEAR(d.z_next.x(0), 0.89, 1e-15);
    EXPECT_NEAR(d.z_next.y(0), 1.09, 1e-15);
    EXPECT_EQ(state.t, 2u);
    EXPECT_EQ(state.z.x(0), d.z_next.x(0));
    EXPECT_EQ(state.averaged_midpoint().x(0), d.z_hat.x(0));
}

TEST(Round, ZeroGradientIsFixedPoint)
{
    // L must be positive, so A is a negligible multiple of I rather than exactly 0.
    QuadraticGame const game(0.0, 1e-300 * Mat::Identity(2, 2), Vec::Zero(2),
                             Vec::Zero(2), 5.0, 0.0);
    IteratePair const z{Vec::Constant(2, 1.0), Vec::Constant(2, -2.0)};
    ServerState state = ServerState::start(z);
    auto const d = vanilla_round(state, game, honest(4), {0.5, 0, 1});
    EXPECT_EQ(d.z_next.x, z.x);
    EXPECT_EQ(d.z_next.y, z.y);
}

TEST(Round, RdegEqualsVanillaWithoutSpread)
{
    auto const game = make_preset(kBilinearPreset, [] {
        PresetParams p;
        p.sigma2 = 0.0;
        return p;
    }());
    ServerState a = ServerState::start(default_initial_point(game));
    ServerState b = a;
    TrimmedAggregator const trim(TrimParams::capped(0.0, 0.1, 20), PartitionMode::fixed, 0);
    RoundContext const ctx{0.4, 9, 1};
    for (int k = 0; k < 50; ++k)
    {
        auto const da = rdeg_round(a, game, honest(20), trim, ctx);
        auto const db = vanilla_round(b, game, honest(20), ctx);
        ASSERT_EQ(da.z_next.x, db.z_next.x);
        ASSERT_EQ(da.z_next.y, db.z_next.y);
    }
}

TEST(Round, SingleAgentIsStochasticExtragradient)
{
    auto const game = xy_game(2.0);
    IteratePair const z{v1(1.0), v1(-1.0)};
    ServerState state = ServerState::start(z);
    double const eta = 0.2;
    auto const d = vanilla_round(state, game, honest(1), {eta, 7, 1});

    auto s0 = CounterStream::for_agent(7, 0, 1, 0);
    auto const g0 = game.sample_gradient(z, s0);
    IteratePair const hat{project(game.set_x(), z.x - eta * g0.gx),
                          project(game.set_y(), z.y + eta * g0.gy)};
    auto s1 = CounterStream::for_agent(7, 0, 1, 1);
    auto const g1 = game.sample_gradient(hat, s1);
    EXPECT_EQ(d.z_hat.x, hat.x);
    EXPECT_EQ(d.z_next.x, project(game.set_x(), z.x - eta * g1.gx));
    EXPECT_EQ(d.z_next.y, project(game.set_y(), z.y + eta * g1.gy));
}

TEST(Round, FreshSamplesPerQuery)
{
    auto const game = xy_game(1.0);
    ServerState state = ServerState::start({v1(0.0), v1(0.0)});
    // At the origin the population gradient is zero, so any update is pure noise.
    auto const d = vanilla_round(state, game, honest(1), {0.1, 3, 1});
    EXPECT_NE(d.err_at_z.gx(0), d.err_at_hat.gx(0));
}

TEST(Round, AnchorAtCurrentIterate)
{
    auto const game = make_preset(kBilinearPreset, {});
    auto const pop = make_population(20, 0.1, Attack::sign_flip(3.0));
    TrimmedAggregator const trim(TrimParams::capped(0.1, 0.1, 20), PartitionMode::fixed, 0);
    ServerState state = ServerState::start(default_initial_point(game));
    for (int k = 0; k < 20; ++k)
    {
        auto const d = rdeg_round(state, game, pop, trim, {0.5, 1, 1});
        IteratePair const again = extragradient_step(game, d.z, d.g_at_hat, 0.5);
        ASSERT_EQ(again.x, d.z_next.x);
        ASSERT_EQ(again.y, d.z_next.y);
    }
}

TEST(Round, SizeMismatch)
{
    auto const game = xy_game();
    ServerState state = ServerState::start({v1(0.0), v1(0.0)});
    TrimmedAggregator const trim(loose(4), PartitionMode::fixed, 0);
    EXPECT_THROW(rdeg_round(state, game, honest(6), trim, {0.1, 0, 1}), DimensionError);
    EXPECT_THROW(vanilla_round(state, game, honest(0), {0.1, 0, 1}), EmptyInputError);
}

//---------------------------------------------------------------------------//
// Runs
//---------------------------------------------------------------------------//

TEST(Run, DefaultsFromProblemConstants)
{
    auto const b = make_preset(kBilinearPreset, {});
    auto const s = make_preset(kScScPreset, {});
    EXPECT_DOUBLE_EQ(default_step_size(b), 1.0 / (2.0 * b.smoothness()));
    EXPECT_DOUBLE_EQ(default_step_size(s), 1.0 / (4.0 * s.smoothness()));
    IteratePair const z = default_initial_point(b);
    EXPECT_NEAR(z.x.norm(), 50.0, 1e-12);
    EXPECT_NEAR(z.y.norm(), 50.0, 1e-12);
}

TEST(Run, LengthAndPreconditions)
{
    auto const game = make_preset(kBilinearPreset, {});
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 1;
    auto const t = run(game, honest(10), MeanAggregator{}, opts);
    EXPECT_EQ(t.records.size(), 1u);
    EXPECT_EQ(t.records[0].t, 1u);
    EXPECT_FALSE(t.abort);

    opts.rounds = 0;
    EXPECT_THROW(run(game, honest(10), MeanAggregator{}, opts), PreconditionError);
    opts.rounds = 5;
    opts.eta = 0.0;
    EXPECT_THROW(run(game, honest(10), MeanAggregator{}, opts), PreconditionError);
    opts.eta = 0.1;
    opts.init = IteratePair{Vec::Constant(10, 100.0), Vec::Zero(10)};
    EXPECT_THROW(run(game, honest(10), MeanAggregator{}, opts), FeasibilityError);
}

TEST(Run, FeasibleIteratesAndNonnegativeMetrics)
{
    auto const game = make_preset(kBilinearPreset, {});
    auto const pop = make_population(20, 0.1, Attack::gaussian_blast(1e9));
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 300;
    opts.seed = 2;
    opts.observer = [&](RoundDetail const& d) {
        EXPECT_TRUE(game.set_x().contains(d.z_hat.x));
        EXPECT_TRUE(game.set_y().contains(d.z_hat.y));
        EXPECT_TRUE(game.set_x().contains(d.z_next.x));
        EXPECT_TRUE(game.set_y().contains(d.z_next.y));
    };
    for (Aggregation agg : {Aggregation(MeanAggregator{}),
                            Aggregation(TrimmedAggregator(TrimParams::capped(0.1, 0.1, 20),
                                                          PartitionMode::fixed, 2))})
    {
        auto const t = run(game, pop, agg, opts);
        ASSERT_EQ(t.records.size(), 300u);
        for (auto const& r : t.records)
        {
            EXPECT_GE(r.gap, 0.0);
            EXPECT_GE(r.dist_sq, 0.0);
            EXPECT_EQ(r.wall_ms, 0.0);
        }
    }
}

TEST(Run, DeterministicAcrossRepeatsAndWorkers)
{
    tbb::global_control gc(tbb::global_control::max_allowed_parallelism, 8);
    auto const game = make_preset(kScScPreset, {});
    auto const pop = make_population(60, 0.1, Attack::gaussian_blast(10.0));
    TrimmedAggregator const trim(TrimParams::capped(0.1, 0.01, 60), PartitionMode::reshuffled, 3);
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 200;
    opts.seed = 3;
    auto const a = run(game, pop, trim, opts);
    auto const b = run(game, pop, trim, opts);
    opts.workers = 6;
    auto const c = run(game, pop, trim, opts);
    ASSERT_EQ(a.records.size(), c.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
    {
        for (auto const* other : {&b, &c})
        {
            auto const& x = a.records[i];
            auto const& y = other->records[i];
            ASSERT_EQ(x.gap, y.gap);
            ASSERT_EQ(x.dist_sq, y.dist_sq);
            ASSERT_EQ(x.err_x_t, y.err_x_t);
            ASSERT_EQ(x.err_y_hat, y.err_y_hat);
        }
    }
    EXPECT_EQ(a.averaged.x, c.averaged.x);
    EXPECT_EQ(a.final_iterate.y, c.final_iterate.y);

    opts.seed = 4;
    auto const d = run(game, pop, trim, opts);
    EXPECT_NE(a.records.back().gap, d.records.back().gap);
}

TEST(Run, PartitionIrrelevantWithoutNoiseOrAttack)
{
    PresetParams p;
    p.sigma2 = 0.0;
    auto const game = make_preset(kBilinearPreset, p);
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 100;
    auto const params = TrimParams::capped(0.0, 0.1, 20);
    auto const fixed = run(game, honest(20), TrimmedAggregator(params, PartitionMode::fixed, 1), opts);
    auto const shuffled
        = run(game, honest(20), TrimmedAggregator(params, PartitionMode::reshuffled, 1), opts);
    for (std::size_t i = 0; i < fixed.records.size(); ++i)
        ASSERT_EQ(fixed.records[i].dist_sq, shuffled.records[i].dist_sq);
}

TEST(Run, GapMeasuredAtAveragedMidpoints)
{
    auto const game = make_preset(kScScPreset, {});
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 30;
    opts.seed = 8;
    Vec sum_x = Vec::Zero(10);
    Vec sum_y = Vec::Zero(10);
    std::vector<double> gaps;
    std::vector<double> dists;
    IteratePair const saddle = game.saddle_point();
    opts.observer = [&](RoundDetail const& d) {
        sum_x += d.z_hat.x;
        sum_y += d.z_hat.y;
        double const k = static_cast<double>(d.t);
        gaps.push_back(game.primal_dual_gap(sum_x / k, sum_y / k));
        dists.push_back(pair_distance_sq(saddle, d.z_next));
    };
    auto const t = run(game, honest(10), MeanAggregator{}, opts);
    for (std::size_t i = 0; i < gaps.size(); ++i)
    {
        EXPECT_NEAR(t.records[i].gap, gaps[i], 1e-9 * std::max(1.0, gaps[i]));
        EXPECT_EQ(t.records[i].dist_sq, dists[i]);
    }
}

TEST(Run, BasicRelationsHoldEveryRound)
{
    auto const game = make_preset(kBilinearPreset, {});
    auto const pop = make_population(100, 0.06, Attack::sign_flip(3.0));
    invariants::CheckResult res{"basic relations"};
    CounterStream probes(12);
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 200;
    opts.observer = [&](RoundDetail const& d) {
        invariants::check_basic_relations(game, d, opts.eta, 10, probes, res);
    };
    (void)run(game, pop, TrimmedAggregator(TrimParams::capped(0.06, 0.01, 100), PartitionMode::fixed, 0),
              opts);
    EXPECT_EQ(res.cases, 200u * 10u * 4u);
    EXPECT_TRUE(res.passed()) << res.failures << " violations, worst " << res.worst;
}

// Desk-scale surrogate of the high-probability error event.
TEST(Run, AggregationErrorsWithinBound)
{
    auto const game = make_preset(kBilinearPreset, {});
    auto const pop = make_population(100, 0.06, Attack::sign_flip(3.0));
    auto const params = TrimParams::capped(0.06, 0.01, 100);
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 2000;
    auto const t = run(game, pop, TrimmedAggregator(params, PartitionMode::fixed, 0), opts);
    double const bound = params.error_bound(game.sigma_x(), game.dim(), opts.rounds, 6.0);
    std::size_t exceed = 0;
    for (auto const& r : t.records)
        exceed += std::max({r.err_x_t, r.err_y_t, r.err_x_hat, r.err_y_hat}) > bound;
    EXPECT_LE(static_cast<double>(exceed), 0.05 * 2000);
}

TEST(Run, CollusiveAttackSeparatesVanillaFromRdeg)
{
    auto const game = make_preset(kBilinearPreset, {});
    IteratePair const target{Vec::Constant(10, 30.0), Vec::Constant(10, 30.0)};
    auto const pop = make_population(100, 0.06, Attack::collusive(target));
    RunOptions opts;
    opts.eta = default_step_size(game);
    opts.rounds = 1000;
    auto const vanilla = run(game, pop, MeanAggregator{}, opts);
    auto const robust = run(
        game, pop, TrimmedAggregator(TrimParams::capped(0.06, 0.01, 100), PartitionMode::fixed, 0),
        opts);
    // The robust run settles in a ball around the saddle that vanilla leaves.
    double const robust_radius = std::sqrt(dist_floor(robust));
    double const vanilla_radius = std::sqrt(dist_floor(vanilla));
    EXPECT_GT(vanilla_radius, 2.0 * robust_radius);
    EXPECT_GT(error_floor(vanilla), 10.0 * error_floor(robust));
}

TEST(Run, NonFiniteStateAborts)
{
    // Starts at ‖x‖ = 50 and spirals inward, so a few rounds complete first.
    auto const base = make_preset(kScScPreset, {});
    FaultyGame const game(base, 49.0);
    RunOptions opts;
    opts.eta = default_step_size(base);
    opts.rounds = 1000;
    auto const t = run(game, honest(4), MeanAggregator{}, opts);
    ASSERT_TRUE(t.abort.has_value());
    EXPECT_EQ(t.records.size() + 1, t.abort->round);
    EXPECT_GT(t.records.size(), 0u);
    EXPECT_LT(t.records.size(), 1000u);
    EXPECT_NE(t.abort->message.find("round"), std::string::npos);
}

TEST(Floors, TailMeans)
{
    RunTrace t;
    for (int i = 1; i <= 20; ++i)
    {
        RoundRecord r;
        r.t = static_cast<std::size_t>(i);
        r.gap = i;
        r.dist_sq = 2.0 * i;
        t.records.push_back(r);
    }
    EXPECT_EQ(error_floor(t), 19.5);
    EXPECT_EQ(dist_floor(t), 39.0);
    t.records.resize(5);
    EXPECT_EQ(error_floor(t), 5.0);
    t.records.clear();
    EXPECT_TRUE(std::isnan(error_floor(t)));
}
