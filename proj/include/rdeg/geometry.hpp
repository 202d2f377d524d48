#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "rdeg/errors.hpp"

namespace rdeg
{

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline bool all_finite(Vec const& v) { return v.allFinite(); }

//---------------------------------------------------------------------------//
/*!
 * Closed Euclidean ball {v : ‖v‖ ≤ radius} centred at the origin.
 */
class BallSet
{
public:
    BallSet(double radius, std::size_t dim) : radius_(radius), dim_(dim)
    {
        if (!(radius >= 0.0) || !std::isfinite(radius))
            throw PreconditionError("ball radius must be a finite nonnegative number");
        if (dim == 0)
            throw PreconditionError("ball dimension must be positive");
    }

    double radius() const noexcept { return radius_; }
    std::size_t dim() const noexcept { return dim_; }
    double diameter() const noexcept { return 2.0 * radius_; }

    bool contains(Vec const& v, double slack = 1e-9) const
    {
        return static_cast<std::size_t>(v.size()) == dim_ && v.norm() <= radius_ + slack;
    }

private:
    double radius_;
    std::size_t dim_;
};

//! A point z = (x, y) of the product set X × Y.
struct IteratePair
{
    Vec x;
    Vec y;
};

inline void check_dim(Vec const& v, std::size_t expected, char const* what)
{
    if (static_cast<std::size_t>(v.size()) != expected)
    {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected)
                             + ", got " + std::to_string(v.size()));
    }
}

/*!
 * Euclidean projection onto the ball: radial scaling when outside.
 *
 * The scale is nudged down until the rounded result has norm ≤ radius, so
 * the output is a member of the set and projecting it again is a no-op.
 */
inline Vec project(BallSet const& set, Vec const& v)
{
    check_dim(v, set.dim(), "project");
    double const norm = v.norm();
    if (norm <= set.radius())
        return v;
    double scale = set.radius() / norm;
    Vec out = v * scale;
    while (out.norm() > set.radius() && scale > 0.0)
    {
        scale = std::nextafter(scale, 0.0);
        out = v * scale;
    }
    return out;
}

inline double pair_distance_sq(IteratePair const& a, IteratePair const& b)
{
    if (a.x.size() != b.x.size() || a.y.size() != b.y.size())
        throw DimensionError("pair_distance_sq: mismatched pair dimensions");
    return (a.x - b.x).squaredNorm() + (a.y - b.y).squaredNorm();
}

} // namespace rdeg
