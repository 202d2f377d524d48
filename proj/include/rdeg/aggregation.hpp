#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdeg/errors.hpp"
#include "rdeg/geometry.hpp"
#include "rdeg/random.hpp"

namespace rdeg
{

//---------------------------------------------------------------------------//
// Trimming level
//---------------------------------------------------------------------------//

//! Corruption fractions must stay strictly below this for the trimmed-mean guarantee.
inline constexpr double kMaxTheoryAlpha = 1.0 / 16.0;

inline void check_trim_inputs(double alpha, double delta, std::size_t agents)
{
    if (!(alpha >= 0.0 && alpha < kMaxTheoryAlpha))
        throw PreconditionError("alpha must lie in [0, 1/16), got " + std::to_string(alpha));
    if (!(delta > 0.0 && delta < 1.0))
        throw PreconditionError("delta must lie in (0, 1), got " + std::to_string(delta));
    if (agents < 2 || agents % 2 != 0)
        throw PreconditionError("agent count must be even and >= 2, got "
                                + std::to_string(agents));
}

inline double epsilon_formula(double alpha, double delta, std::size_t agents)
{
    return 8.0 * alpha + 24.0 * std::log(4.0 / delta) / static_cast<double>(agents);
}

//! Smallest even M for which the formula gives ε < 1/2; requires α < 1/16.
inline std::size_t min_agents_for(double alpha, double delta)
{
    double const slack = 0.5 - 8.0 * alpha;
    double const bound = 24.0 * std::log(4.0 / delta) / slack;
    auto m = static_cast<std::size_t>(std::floor(bound)) + 1;
    if (m % 2 != 0)
        ++m;
    while (epsilon_formula(alpha, delta, m) >= 0.5)
        m += 2;
    return m;
}

/*!
 * ε = 8α + 24·ln(4/δ)/M, validated against the regime where the estimator's
 * deviation bound holds (α < 1/16, δ ≥ 4e^{−M/2}) and where the quantile
 * indices do not cross (ε < 1/2).
 */
inline double compute_epsilon(double alpha, double delta, std::size_t agents)
{
    check_trim_inputs(alpha, delta, agents);
    if (delta < 4.0 * std::exp(-static_cast<double>(agents) / 2.0))
    {
        throw ConfidenceOutOfRange("delta=" + std::to_string(delta) + " is below 4*exp(-M/2) for M="
                                   + std::to_string(agents));
    }
    double const eps = epsilon_formula(alpha, delta, agents);
    if (eps >= 0.5)
    {
        std::size_t const need = min_agents_for(alpha, delta);
        throw EpsilonOutOfRange("trimming level epsilon=" + std::to_string(eps)
                                    + " is >= 1/2; (alpha, delta) needs at least M="
                                    + std::to_string(need) + " agents",
                                eps, need);
    }
    return eps;
}

enum class TrimPolicy
{
    strict, //!< formula ε; any violation is an error
    capped, //!< ε = min(formula, cap), used outside the asymptotic regime
};

//! Largest ε < 1/2 whose clamp interval is the median pair (h even) or the median (h odd).
inline double max_admissible_epsilon(std::size_t agents)
{
    return 0.5 - 0.5 / static_cast<double>(agents);
}

/*!
 * Parameters of the coordinate-wise trimmed mean.
 *
 * The strict policy is the textbook estimator and only admits configurations
 * with M > 24·ln(4/δ)/(1/2 − 8α), i.e. several hundred agents at least. The
 * capped policy applies the same estimator with ε = min(formula, cap); the
 * default cap is the largest admissible level, so desk-scale runs (M = 20…500)
 * trim as hard as the index rule allows. Its structural requirement is α < cap.
 */
class TrimParams
{
public:
    static TrimParams strict(double alpha, double delta, std::size_t agents)
    {
        double const eps = compute_epsilon(alpha, delta, agents);
        return TrimParams(alpha, delta, agents, eps, eps, TrimPolicy::strict);
    }

    static TrimParams capped(double alpha, double delta, std::size_t agents,
                             std::optional<double> cap = std::nullopt)
    {
        if (agents < 2 || agents % 2 != 0)
        {
            throw PreconditionError("agent count must be even and >= 2, got "
                                    + std::to_string(agents));
        }
        double const limit = cap.value_or(max_admissible_epsilon(agents));
        if (!(limit > 0.0 && limit < 0.5))
            throw PreconditionError("epsilon cap must lie in (0, 1/2), got " + std::to_string(limit));
        if (!(alpha >= 0.0 && alpha < limit))
        {
            throw PreconditionError("alpha must lie in [0, epsilon cap=" + std::to_string(limit)
                                    + "), got " + std::to_string(alpha));
        }
        if (!(delta > 0.0 && delta < 1.0))
            throw PreconditionError("delta must lie in (0, 1), got " + std::to_string(delta));
        double const formula = epsilon_formula(alpha, delta, agents);
        return TrimParams(alpha, delta, agents, std::min(formula, limit), formula,
                          TrimPolicy::capped);
    }

    double alpha() const noexcept { return alpha_; }
    double delta() const noexcept { return delta_; }
    std::size_t agents() const noexcept { return agents_; }
    //! Trimming level actually applied.
    double epsilon() const noexcept { return epsilon_; }
    //! 8α + 24·ln(4/δ)/M, before any cap.
    double formula_epsilon() const noexcept { return formula_epsilon_; }
    TrimPolicy policy() const noexcept { return policy_; }

    //! Δ = c·σ·(√α + √(ln(4dT²)/M)): high-probability bound on aggregation error norms.
    double error_bound(double sigma, std::size_t dim, std::size_t rounds, double c) const
    {
        double const t = static_cast<double>(rounds);
        double const log_term = std::log(4.0 * static_cast<double>(dim) * t * t);
        return c * sigma
               * (std::sqrt(alpha_) + std::sqrt(log_term / static_cast<double>(agents_)));
    }

private:
    TrimParams(double alpha, double delta, std::size_t agents, double eps, double formula,
               TrimPolicy policy)
        : alpha_(alpha)
        , delta_(delta)
        , agents_(agents)
        , epsilon_(eps)
        , formula_epsilon_(formula)
        , policy_(policy)
    {
    }

    double alpha_;
    double delta_;
    std::size_t agents_;
    double epsilon_;
    double formula_epsilon_;
    TrimPolicy policy_;
};

//! Deviation bound c·σ·(√α + √(ln(1/δ)/M)) for a single scalar estimate.
inline double scalar_deviation_bound(double c, double sigma, double alpha, double delta,
                                     std::size_t agents)
{
    return c * sigma
           * (std::sqrt(alpha) + std::sqrt(std::log(1.0 / delta) / static_cast<double>(agents)));
}

//---------------------------------------------------------------------------//
// Chunk partition
//---------------------------------------------------------------------------//

enum class PartitionMode
{
    fixed,
    reshuffled, //!< fresh random split every round
};

//! Split of the M agents into the quantile chunk and the averaging chunk.
class ChunkPartition
{
public:
    ChunkPartition(std::vector<std::size_t> quantile_ids, std::vector<std::size_t> average_ids)
        : quantile_(std::move(quantile_ids)), average_(std::move(average_ids))
    {
        std::size_t const total = quantile_.size() + average_.size();
        if (quantile_.empty() || quantile_.size() != average_.size())
            throw PreconditionError("partition chunks must be non-empty and of equal size");
        std::vector<char> seen(total, 0);
        for (auto const* ids : {&quantile_, &average_})
        {
            for (std::size_t id : *ids)
            {
                if (id >= total || seen[id])
                    throw PreconditionError("partition must cover each agent exactly once");
                seen[id] = 1;
            }
        }
    }

    //! Even agent indices estimate the quantiles, odd ones are averaged.
    static ChunkPartition even_odd(std::size_t agents)
    {
        if (agents < 2 || agents % 2 != 0)
            throw PreconditionError("agent count must be even and >= 2");
        std::vector<std::size_t> q;
        std::vector<std::size_t> a;
        for (std::size_t i = 0; i < agents; ++i)
            (i % 2 == 0 ? q : a).push_back(i);
        return ChunkPartition(std::move(q), std::move(a));
    }

    //! Seeded uniform split, a pure function of (seed, round).
    static ChunkPartition shuffled(std::size_t agents, std::uint64_t seed, std::uint64_t round)
    {
        if (agents < 2 || agents % 2 != 0)
            throw PreconditionError("agent count must be even and >= 2");
        std::vector<std::size_t> ids(agents);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        CounterStream stream(fold_key(fold_key(0x7061727469ULL, seed), round));
        for (std::size_t i = agents - 1; i > 0; --i)
        {
            // modulo bias is below M/2^64
            auto const j = static_cast<std::size_t>(stream() % (i + 1));
            std::swap(ids[i], ids[j]);
        }
        std::size_t const half = agents / 2;
        return ChunkPartition({ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(half)},
                              {ids.begin() + static_cast<std::ptrdiff_t>(half), ids.end()});
    }

    std::size_t agents() const noexcept { return quantile_.size() + average_.size(); }
    std::size_t half() const noexcept { return quantile_.size(); }
    std::vector<std::size_t> const& quantile_ids() const noexcept { return quantile_; }
    std::vector<std::size_t> const& average_ids() const noexcept { return average_; }

private:
    std::vector<std::size_t> quantile_;
    std::vector<std::size_t> average_;
};

//---------------------------------------------------------------------------//
// Estimators
//---------------------------------------------------------------------------//

struct QuantileIndices
{
    std::size_t lo; //!< 1-based
    std::size_t hi; //!< 1-based
};

/*!
 * k_lo = max(1, ⌈ε·h⌉), k_hi = min(h, ⌈(1−ε)·h⌉) for a chunk of size h.
 *
 * Products like 0.1·30 land one ulp above an integer; the 1e-9 slack keeps
 * those from rounding up a whole index.
 */
inline QuantileIndices quantile_indices(std::size_t half, double eps)
{
    auto const h = static_cast<double>(half);
    auto up = [](double v) { return static_cast<std::size_t>(std::ceil(v - 1e-9)); };
    std::size_t const lo = std::max<std::size_t>(1, up(eps * h));
    std::size_t const hi = std::min<std::size_t>(half, std::max<std::size_t>(1, up((1.0 - eps) * h)));
    return {lo, hi};
}

/*!
 * Univariate trimmed mean.
 *
 * The quantile chunk fixes the clamp interval [γ, β] = [Z*_{k_lo}, Z*_{k_hi}];
 * the estimate is the mean of the averaging chunk clamped to that interval.
 * The result is confined to [γ, β] even under rounding.
 */
inline double trimmed_mean_1d(std::span<double const> quantile_chunk,
                              std::span<double const> average_chunk, double eps)
{
    if (quantile_chunk.empty() || average_chunk.empty())
        throw EmptyInputError("trimmed_mean_1d: empty chunk");
    if (quantile_chunk.size() != average_chunk.size())
        throw DimensionError("trimmed_mean_1d: chunks must have equal length");
    if (!(eps >= 0.0 && eps < 0.5))
        throw PreconditionError("trimmed_mean_1d: epsilon must lie in [0, 1/2)");

    std::vector<double> sorted(quantile_chunk.begin(), quantile_chunk.end());
    std::sort(sorted.begin(), sorted.end());
    auto const [lo, hi] = quantile_indices(sorted.size(), eps);
    double const gamma = sorted[lo - 1];
    double const beta = sorted[hi - 1];

    double sum = 0.0;
    for (double z : average_chunk)
        sum += std::clamp(z, gamma, beta);
    double const mean = sum / static_cast<double>(average_chunk.size());
    return std::clamp(mean, gamma, beta);
}

//! Coordinate-wise trimmed mean of an M×d sample matrix, one partition for all columns.
inline Vec trim_vectors(Mat const& samples, TrimParams const& params,
                        ChunkPartition const& partition)
{
    auto const rows = static_cast<std::size_t>(samples.rows());
    if (rows != params.agents())
    {
        throw DimensionError("trim_vectors: expected " + std::to_string(params.agents())
                             + " rows, got " + std::to_string(rows));
    }
    if (partition.agents() != rows)
        throw DimensionError("trim_vectors: partition does not match the agent count");

    std::size_t const half = partition.half();
    std::vector<double> qbuf(half);
    std::vector<double> abuf(half);
    Vec out(samples.cols());
    for (Eigen::Index j = 0; j < samples.cols(); ++j)
    {
        for (std::size_t k = 0; k < half; ++k)
        {
            qbuf[k] = samples(static_cast<Eigen::Index>(partition.quantile_ids()[k]), j);
            abuf[k] = samples(static_cast<Eigen::Index>(partition.average_ids()[k]), j);
        }
        out(j) = trimmed_mean_1d(qbuf, abuf, params.epsilon());
    }
    return out;
}

/*!
 * Column means; the non-robust baseline.
 *
 * Accumulated as a running mean so that constant columns come back exactly.
 */
inline Vec mean_vectors(Mat const& samples)
{
    if (samples.rows() == 0 || samples.cols() == 0)
        throw EmptyInputError("mean_vectors: no samples");
    Vec mean = samples.row(0).transpose();
    for (Eigen::Index i = 1; i < samples.rows(); ++i)
        mean += (samples.row(i).transpose() - mean) / static_cast<double>(i + 1);
    return mean;
}

} // namespace rdeg
