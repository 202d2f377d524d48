#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rdeg/aggregation.hpp"
#include "rdeg/geometry.hpp"
#include "rdeg/problems.hpp"
#include "rdeg/protocol.hpp"
#include "rdeg/random.hpp"

// Runtime-checkable properties, shared by the selftest command and the tests.

namespace rdeg::invariants
{

struct CheckResult
{
    std::string name;
    std::size_t cases = 0;
    std::size_t failures = 0;
    double worst = 0.0; //!< largest violation seen (0 if none)

    bool passed() const noexcept { return failures == 0 && cases > 0; }

    void record(bool ok, double violation = 0.0)
    {
        ++cases;
        if (!ok)
        {
            ++failures;
            worst = std::max(worst, violation);
        }
    }
};

inline Vec gaussian_vec(std::size_t dim, CounterStream& stream)
{
    Vec v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index j = 0; j < v.size(); ++j)
        v(j) = stream.normal();
    return v;
}

//! Uniform point in the ball; with probability 1/4 on the boundary sphere.
inline Vec sample_in_ball(BallSet const& set, CounterStream& stream)
{
    Vec dir = gaussian_vec(set.dim(), stream);
    double const n = dir.norm();
    if (n == 0.0)
        return Vec::Zero(dir.size());
    double radius = set.radius();
    if (stream.uniform() >= 0.25)
        radius *= std::pow(stream.uniform(), 1.0 / static_cast<double>(set.dim()));
    return dir * (radius / n);
}

//---------------------------------------------------------------------------//
// geometry
//---------------------------------------------------------------------------//

//! Membership, idempotence, non-expansiveness and the variational inequality.
inline std::vector<CheckResult> check_projection(std::size_t trials, std::uint64_t seed)
{
    CheckResult member{"projection lands in the set"};
    CheckResult idem{"projection is idempotent"};
    CheckResult nonexp{"projection is non-expansive"};
    CheckResult vi{"projection variational inequality"};
    CounterStream stream(fold_key(0x70726f6aULL, seed));
    for (std::size_t k = 0; k < trials; ++k)
    {
        std::size_t const dim = 1 + static_cast<std::size_t>(stream() % 12);
        BallSet const set(0.1 + 10.0 * stream.uniform(), dim);
        double const spread = 0.1 + 30.0 * stream.uniform();
        Vec const u = spread * gaussian_vec(dim, stream);
        Vec const v = spread * gaussian_vec(dim, stream);
        Vec const pu = project(set, u);
        Vec const pv = project(set, v);

        member.record(set.contains(pu), pu.norm() - set.radius());
        double const drift = (project(set, pu) - pu).norm();
        idem.record(drift <= 1e-12 * std::max(1.0, set.radius()), drift);
        double const excess = (pu - pv).norm() - (u - v).norm();
        nonexp.record(excess <= 1e-12 * std::max(1.0, (u - v).norm()), excess);
        for (int s = 0; s < 4; ++s)
        {
            Vec const w = sample_in_ball(set, stream);
            double const lhs = (w - pu).dot(pu - u);
            vi.record(lhs >= -1e-9, -lhs);
        }
    }
    return {member, idem, nonexp, vi};
}

//---------------------------------------------------------------------------//
// aggregation
//---------------------------------------------------------------------------//

/*!
 * Range confinement, positive affine equivariance and permutation invariance
 * of trimmed_mean_1d on random instances (some with gross outliers).
 */
inline std::vector<CheckResult> check_trimmed_mean(std::size_t trials, std::uint64_t seed)
{
    CheckResult range{"trimmed mean within [gamma, beta]"};
    CheckResult affine{"trimmed mean affine equivariance"};
    CheckResult perm{"trimmed mean permutation invariance"};
    CounterStream stream(fold_key(0x7472696dULL, seed));
    std::vector<double> q;
    std::vector<double> a;
    for (std::size_t k = 0; k < trials; ++k)
    {
        std::size_t const h = 1 + static_cast<std::size_t>(stream() % 60);
        double const eps = 0.49 * stream.uniform();
        q.resize(h);
        a.resize(h);
        for (std::size_t i = 0; i < h; ++i)
        {
            q[i] = stream.normal();
            a[i] = stream.normal();
            if (stream.uniform() < 0.1)
                a[i] *= 1e6;
        }
        double const est = trimmed_mean_1d(q, a, eps);

        std::vector<double> sorted = q;
        std::sort(sorted.begin(), sorted.end());
        auto const [lo, hi] = quantile_indices(h, eps);
        double const gamma = sorted[lo - 1];
        double const beta = sorted[hi - 1];
        range.record(est >= gamma && est <= beta, std::max(gamma - est, est - beta));

        double const scale = 0.01 + 100.0 * stream.uniform();
        double const shift = 50.0 * stream.normal();
        std::vector<double> qa(h);
        std::vector<double> aa(h);
        for (std::size_t i = 0; i < h; ++i)
        {
            qa[i] = scale * q[i] + shift;
            aa[i] = scale * a[i] + shift;
        }
        double const expect = scale * est + shift;
        double const got = trimmed_mean_1d(qa, aa, eps);
        double const tol = 1e-9 * (std::abs(expect) + std::abs(shift) + scale);
        affine.record(std::abs(got - expect) <= tol, std::abs(got - expect));

        std::vector<double> qp = q;
        std::vector<double> ap = a;
        for (std::size_t i = h - 1; i > 0; --i)
        {
            std::swap(qp[i], qp[stream() % (i + 1)]);
            std::swap(ap[i], ap[stream() % (i + 1)]);
        }
        double const pgot = trimmed_mean_1d(qp, ap, eps);
        double const ptol = 1e-12 * std::max({1.0, std::abs(gamma), std::abs(beta)});
        perm.record(std::abs(pgot - est) <= ptol, std::abs(pgot - est));
    }
    return {range, affine, perm};
}

//---------------------------------------------------------------------------//
// problems
//---------------------------------------------------------------------------//

//! ⟨F(z₂) − F(z₁), z₂ − z₁⟩ ≥ μ‖z₂ − z₁‖² − tol with F = [∇_x f; −∇_y f].
template <SaddleProblem Problem>
CheckResult check_strong_monotonicity(Problem const& problem, std::size_t pairs,
                                      std::uint64_t seed, double tol = 1e-9)
{
    CheckResult res{"strong monotonicity of F"};
    CounterStream stream(fold_key(0x6d6f6e6fULL, seed));
    double const mu = problem.strong_convexity();
    for (std::size_t k = 0; k < pairs; ++k)
    {
        IteratePair const z1{sample_in_ball(problem.set_x(), stream),
                             sample_in_ball(problem.set_y(), stream)};
        IteratePair const z2{sample_in_ball(problem.set_x(), stream),
                             sample_in_ball(problem.set_y(), stream)};
        GradientSample const g1 = problem.population_gradient(z1);
        GradientSample const g2 = problem.population_gradient(z2);
        double const lhs = (g2.gx - g1.gx).dot(z2.x - z1.x) - (g2.gy - g1.gy).dot(z2.y - z1.y);
        double const rhs = mu * pair_distance_sq(z1, z2);
        res.record(lhs >= rhs - tol, rhs - lhs);
    }
    return res;
}

//! ‖F(z₁) − F(z₂)‖ ≤ L‖z₁ − z₂‖ (joint Lipschitz bound through ‖A‖₂ + μ).
template <SaddleProblem Problem>
CheckResult check_smoothness(Problem const& problem, std::size_t pairs, std::uint64_t seed)
{
    CheckResult res{"gradient Lipschitz bound"};
    CounterStream stream(fold_key(0x6c697073ULL, seed));
    double const l = problem.smoothness();
    for (std::size_t k = 0; k < pairs; ++k)
    {
        IteratePair const z1{sample_in_ball(problem.set_x(), stream),
                             sample_in_ball(problem.set_y(), stream)};
        IteratePair const z2{sample_in_ball(problem.set_x(), stream),
                             sample_in_ball(problem.set_y(), stream)};
        GradientSample const g1 = problem.population_gradient(z1);
        GradientSample const g2 = problem.population_gradient(z2);
        double const lhs
            = std::sqrt((g1.gx - g2.gx).squaredNorm() + (g1.gy - g2.gy).squaredNorm());
        double const rhs = l * std::sqrt(pair_distance_sq(z1, z2));
        res.record(lhs <= rhs * (1.0 + 1e-12) + 1e-12, lhs - rhs);
    }
    return res;
}

/*!
 * Monte-Carlo unbiasedness and second moment of the gradient oracle at one
 * point: every coordinate mean within 5 standard errors of the population
 * gradient, and E‖g − ∇f‖² within 10% of σ_x².
 */
template <SaddleProblem Problem>
std::vector<CheckResult> check_gradient_noise(Problem const& problem, IteratePair const& at,
                                              std::size_t samples, std::uint64_t seed)
{
    CheckResult bias{"stochastic gradient unbiased"};
    CheckResult var{"stochastic gradient variance"};
    GradientSample const pop = problem.population_gradient(at);
    Vec sum_x = Vec::Zero(pop.gx.size());
    Vec sum_y = Vec::Zero(pop.gy.size());
    double sq_x = 0.0;
    for (std::size_t k = 0; k < samples; ++k)
    {
        auto stream = CounterStream::for_agent(seed, k, 0, 0);
        GradientSample const g = problem.sample_gradient(at, stream);
        sum_x += g.gx - pop.gx;
        sum_y += g.gy - pop.gy;
        sq_x += (g.gx - pop.gx).squaredNorm();
    }
    double const n = static_cast<double>(samples);
    double const sigma2_x = problem.sigma_x() * problem.sigma_x();
    double const per_coord = sigma2_x / static_cast<double>(pop.gx.size());
    double const se = std::sqrt(per_coord / n);
    for (Eigen::Index j = 0; j < sum_x.size(); ++j)
    {
        double const dev = std::max(std::abs(sum_x(j) / n), std::abs(sum_y(j) / n));
        bias.record(dev <= 5.0 * se + 1e-12, dev);
    }
    double const second = sq_x / n;
    var.record(std::abs(second - sigma2_x) <= 0.1 * sigma2_x + 1e-12,
               std::abs(second - sigma2_x));
    return {bias, var};
}

//---------------------------------------------------------------------------//
// protocol
//---------------------------------------------------------------------------//

/*!
 * The four basic relations of one extra-gradient round, checked against
 * `probes` random points (x, y) of the constraint set:
 *
 *   2η⟨g̃_x(z_t), x̂_t − x⟩      ≤ ‖x − x_t‖² − ‖x − x̂_t‖² − ‖x̂_t − x_t‖²
 *  −2η⟨g̃_y(z_t), ŷ_t − y⟩      ≤ ‖y − y_t‖² − ‖y − ŷ_t‖² − ‖ŷ_t − y_t‖²
 *   2η⟨g̃_x(ẑ_t), x_{t+1} − x⟩  ≤ ‖x − x_t‖² − ‖x − x_{t+1}‖² − ‖x_{t+1} − x_t‖²
 *  −2η⟨g̃_y(ẑ_t), y_{t+1} − y⟩  ≤ ‖y − y_t‖² − ‖y − y_{t+1}‖² − ‖y_{t+1} − y_t‖²
 */
template <SaddleProblem Problem>
void check_basic_relations(Problem const& problem, RoundDetail const& d, double eta,
                           std::size_t probes, CounterStream& stream, CheckResult& res,
                           double tol = 1e-8)
{
    auto relation = [&](double sign, Vec const& g, Vec const& next, Vec const& cur,
                        Vec const& probe) {
        double const lhs = sign * 2.0 * eta * g.dot(next - probe);
        double const rhs = (probe - cur).squaredNorm() - (probe - next).squaredNorm()
                           - (next - cur).squaredNorm();
        res.record(lhs <= rhs + tol, lhs - rhs);
    };
    for (std::size_t k = 0; k < probes; ++k)
    {
        Vec const x = sample_in_ball(problem.set_x(), stream);
        Vec const y = sample_in_ball(problem.set_y(), stream);
        relation(1.0, d.g_at_z.gx, d.z_hat.x, d.z.x, x);
        relation(-1.0, d.g_at_z.gy, d.z_hat.y, d.z.y, y);
        relation(1.0, d.g_at_hat.gx, d.z_next.x, d.z.x, x);
        relation(-1.0, d.g_at_hat.gy, d.z_next.y, d.z.y, y);
    }
}

} // namespace rdeg::invariants
