#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "rdeg/errors.hpp"
#include "rdeg/geometry.hpp"
#include "rdeg/random.hpp"

namespace rdeg
{

//! Partial gradients (∇_x, ∇_y) or a noisy estimate of them.
struct GradientSample
{
    Vec gx;
    Vec gy;
};

//! Requirements the protocol engine places on a min-max problem.
template <typename P>
concept SaddleProblem = requires(P const& p, IteratePair const& z, Vec const& v,
                                 CounterStream& stream) {
    { p.n() } -> std::convertible_to<std::size_t>;
    { p.m() } -> std::convertible_to<std::size_t>;
    { p.set_x() } -> std::convertible_to<BallSet>;
    { p.set_y() } -> std::convertible_to<BallSet>;
    { p.smoothness() } -> std::convertible_to<double>;
    { p.strong_convexity() } -> std::convertible_to<double>;
    { p.sigma() } -> std::convertible_to<double>;
    { p.sample_gradient(z, stream) } -> std::same_as<GradientSample>;
    { p.population_gradient(z) } -> std::same_as<GradientSample>;
    { p.primal_dual_gap(v, v) } -> std::convertible_to<double>;
    { p.saddle_point() } -> std::same_as<IteratePair>;
};

inline double operator_norm(Mat const& a)
{
    if (a.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<Mat> svd(a);
    return svd.singularValues()(0);
}

//---------------------------------------------------------------------------//
/*!
 * Quadratic game over two balls of radius ρ:
 *
 *   f(x, y) = (μ/2)‖x‖² + xᵀAy − (μ/2)‖y‖² + 2bᵀx − 2cᵀy,
 *
 * observed through the stochastic objective with b, c replaced by b + ζ and
 * c + ζ, ζ ~ N(0, σ²I) drawn once per sample and shared by both blocks.
 * μ = 0 gives the bilinear game; μ > 0 is strongly convex-strongly concave.
 *
 * Immutable after construction.
 */
class QuadraticGame
{
public:
    QuadraticGame(double mu, Mat a, Vec b, Vec c, double rho, double sigma2)
        : mu_(mu)
        , a_(std::move(a))
        , b_(std::move(b))
        , c_(std::move(c))
        , set_x_(rho, static_cast<std::size_t>(a_.rows()))
        , set_y_(rho, static_cast<std::size_t>(a_.cols()))
        , sigma_(std::sqrt(sigma2))
    {
        if (a_.rows() == 0 || a_.cols() == 0)
            throw DimensionError("coupling matrix must be non-empty");
        // One ζ perturbs both b and c, so the blocks must share a dimension.
        if (a_.rows() != a_.cols())
            throw DimensionError("coupling matrix must be square");
        check_dim(b_, n(), "b");
        check_dim(c_, m(), "c");
        if (!(mu >= 0.0) || !std::isfinite(mu))
            throw PreconditionError("strong convexity modulus must be finite and >= 0");
        if (!(sigma2 >= 0.0) || !std::isfinite(sigma2))
            throw PreconditionError("noise variance must be finite and >= 0");
        if (!a_.allFinite() || !b_.allFinite() || !c_.allFinite())
            throw PreconditionError("game data must be finite");
        a_norm_ = operator_norm(a_);
        if (mu_ + a_norm_ <= 0.0)
            throw PreconditionError("smoothness constant must be positive");
    }

    std::size_t n() const noexcept { return static_cast<std::size_t>(a_.rows()); }
    std::size_t m() const noexcept { return static_cast<std::size_t>(a_.cols()); }
    std::size_t dim() const noexcept { return std::max(n(), m()); }
    BallSet const& set_x() const noexcept { return set_x_; }
    BallSet const& set_y() const noexcept { return set_y_; }
    Mat const& coupling() const noexcept { return a_; }
    Vec const& b() const noexcept { return b_; }
    Vec const& c() const noexcept { return c_; }

    //! L = μ + ‖A‖₂.
    double smoothness() const noexcept { return mu_ + a_norm_; }
    double strong_convexity() const noexcept { return mu_; }
    double condition() const noexcept { return mu_ / smoothness(); }
    double noise_std() const noexcept { return sigma_; }
    //! Per-coordinate gradient noise is 2ζ_j, hence σ_x = 2σ√n.
    double sigma_x() const noexcept { return 2.0 * sigma_ * std::sqrt(static_cast<double>(n())); }
    double sigma_y() const noexcept { return 2.0 * sigma_ * std::sqrt(static_cast<double>(m())); }
    double sigma() const noexcept { return std::max(sigma_x(), sigma_y()); }
    double diameter() const noexcept
    {
        return std::max(set_x_.diameter(), set_y_.diameter());
    }

    double objective(Vec const& x, Vec const& y) const
    {
        return 0.5 * mu_ * x.squaredNorm() + x.dot(a_ * y) - 0.5 * mu_ * y.squaredNorm()
               + 2.0 * b_.dot(x) - 2.0 * c_.dot(y);
    }

    GradientSample population_gradient(IteratePair const& at) const
    {
        check_pair(at);
        return {mu_ * at.x + a_ * at.y + 2.0 * b_,
                -mu_ * at.y + a_.transpose() * at.x - 2.0 * c_};
    }

    GradientSample sample_gradient(IteratePair const& at, CounterStream& stream) const
    {
        return perturb(population_gradient(at), stream);
    }

    //! Adds the sampling noise to a population gradient; sample_gradient = perturb ∘ population_gradient.
    GradientSample perturb(GradientSample g, CounterStream& stream) const
    {
        if (sigma_ == 0.0)
            return g;
        for (Eigen::Index j = 0; j < g.gx.size(); ++j)
        {
            double const noise = 2.0 * sigma_ * stream.normal();
            g.gx(j) += noise;
            g.gy(j) -= noise;
        }
        return g;
    }

    //! argmax over Y of f(x, ·).
    Vec best_response_y(Vec const& x) const
    {
        Vec const v = a_.transpose() * x - 2.0 * c_;
        return maximize_on_ball(v, set_y_);
    }

    //! argmin over X of f(·, y).
    Vec best_response_x(Vec const& y) const
    {
        Vec const u = a_ * y + 2.0 * b_;
        return maximize_on_ball(-u, set_x_);
    }

    /*!
     * φ = max_y f(x̄, y) − min_x f(x, ȳ).
     *
     * Both inner problems are isotropic quadratics over a ball, so the KKT
     * multiplier of the norm constraint is explicit and the solve is exact.
     */
    double primal_dual_gap(Vec const& x_bar, Vec const& y_bar) const
    {
        check_dim(x_bar, n(), "primal_dual_gap x");
        check_dim(y_bar, m(), "primal_dual_gap y");
        if (!set_x_.contains(x_bar) || !set_y_.contains(y_bar))
            throw FeasibilityError("primal_dual_gap: point outside the constraint set");

        double gap = 0.0;
        if (mu_ == 0.0)
        {
            double const rho_x = set_x_.radius();
            double const rho_y = set_y_.radius();
            gap = rho_y * (a_.transpose() * x_bar - 2.0 * c_).norm() + 2.0 * b_.dot(x_bar)
                  + rho_x * (a_ * y_bar + 2.0 * b_).norm() + 2.0 * c_.dot(y_bar);
        }
        else
        {
            gap = objective(x_bar, best_response_y(x_bar))
                  - objective(best_response_x(y_bar), y_bar);
        }
        return std::max(gap, 0.0);
    }

    /*!
     * Interior saddle from the stationarity system
     *   μx + Ay = −2b,  Aᵀx − μy = 2c.
     */
    IteratePair saddle_point() const
    {
        auto const nn = static_cast<Eigen::Index>(n());
        auto const mm = static_cast<Eigen::Index>(m());
        Mat k = Mat::Zero(nn + mm, nn + mm);
        k.topLeftCorner(nn, nn) = mu_ * Mat::Identity(nn, nn);
        k.topRightCorner(nn, mm) = a_;
        k.bottomLeftCorner(mm, nn) = a_.transpose();
        k.bottomRightCorner(mm, mm) = -mu_ * Mat::Identity(mm, mm);
        Vec rhs(nn + mm);
        rhs << -2.0 * b_, 2.0 * c_;

        Eigen::FullPivLU<Mat> lu(k);
        if (!lu.isInvertible())
            throw NoInteriorSaddleError("stationarity system is singular");
        Vec const sol = lu.solve(rhs);
        IteratePair z{sol.head(nn), sol.tail(mm)};
        if (!z.x.allFinite() || !z.y.allFinite())
            throw NoInteriorSaddleError("stationarity solve produced non-finite values");
        if (z.x.norm() >= set_x_.radius() || z.y.norm() >= set_y_.radius())
            throw NoInteriorSaddleError("stationary point lies outside the ball interior");
        return z;
    }

private:
    // argmax_{‖w‖≤ρ} ⟨v, w⟩ − (μ/2)‖w‖²; for μ = 0 the maximiser is on the sphere.
    Vec maximize_on_ball(Vec const& v, BallSet const& set) const
    {
        double const norm = v.norm();
        if (mu_ == 0.0)
        {
            if (norm == 0.0)
                return Vec::Zero(v.size());
            return v * (set.radius() / norm);
        }
        // Stationarity: w = v / (μ + λ) with λ = max(0, ‖v‖/ρ − μ).
        return project(set, v / mu_);
    }

    void check_pair(IteratePair const& at) const
    {
        check_dim(at.x, n(), "gradient x");
        check_dim(at.y, m(), "gradient y");
    }

    double mu_;
    Mat a_;
    Vec b_;
    Vec c_;
    BallSet set_x_;
    BallSet set_y_;
    double sigma_;
    double a_norm_ = 0.0;
};

static_assert(SaddleProblem<QuadraticGame>);

//---------------------------------------------------------------------------//
// Presets
//---------------------------------------------------------------------------//

struct PresetParams
{
    std::size_t dim = 10;
    double rho = 100.0;
    double sigma2 = 10.0;
    double mu = 0.1; //!< used by the SC-SC preset only
    std::uint64_t problem_seed = 2024;
};

//! d×d matrix of i.i.d. standard normals scaled to unit operator norm.
inline Mat random_unit_norm_matrix(std::size_t dim, std::uint64_t seed)
{
    CounterStream stream(fold_key(0x6d6174726978ULL, seed));
    auto const d = static_cast<Eigen::Index>(dim);
    Mat a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            a(i, j) = stream.normal();
    return a / operator_norm(a);
}

inline QuadraticGame make_bilinear(Mat a, Vec b, Vec c, double rho, double sigma2)
{
    return QuadraticGame(0.0, std::move(a), std::move(b), std::move(c), rho, sigma2);
}

inline QuadraticGame make_scsc(double mu, Mat a, Vec b, Vec c, double rho, double sigma2)
{
    if (!(mu > 0.0))
        throw PreconditionError("SC-SC game needs a positive modulus");
    return QuadraticGame(mu, std::move(a), std::move(b), std::move(c), rho, sigma2);
}

inline constexpr std::string_view kBilinearPreset = "bilinear-sec6";
inline constexpr std::string_view kScScPreset = "scsc-quadratic";

//! Builds a named preset; b = c = 0 so the saddle is the origin.
inline QuadraticGame make_preset(std::string_view name, PresetParams const& p)
{
    if (p.dim == 0)
        throw PreconditionError("preset dimension must be positive");
    auto const d = static_cast<Eigen::Index>(p.dim);
    Mat a = random_unit_norm_matrix(p.dim, p.problem_seed);
    if (name == kBilinearPreset)
        return make_bilinear(std::move(a), Vec::Zero(d), Vec::Zero(d), p.rho, p.sigma2);
    if (name == kScScPreset)
        return make_scsc(p.mu, std::move(a), Vec::Zero(d), Vec::Zero(d), p.rho, p.sigma2);
    throw PreconditionError("unknown problem preset '" + std::string(name) + "'");
}

} // namespace rdeg
