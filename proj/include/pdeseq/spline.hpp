#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdeseq/grid.hpp"
#include "pdeseq/rng.hpp"
#include "pdeseq/tridiagonal.hpp"

namespace pdeseq {

/// C2 piecewise-cubic interpolant with not-a-knot end conditions.
///
/// The fit solves the standard tridiagonal system for the knot slopes s_i;
/// the not-a-knot rows make the third derivative continuous across the
/// second and next-to-last knots, so the first two (and last two) intervals
/// carry one cubic each. Three knots degrade to a single parabola and two
/// knots to a straight line, matching the usual convention.
class CubicSpline {
public:
    /// Coefficients of one interval, as value + t, t^2, t^3 terms in the
    /// local coordinate t = x - knot[i].
    struct Piece {
        double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
        bool operator==(const Piece&) const = default;
    };

    CubicSpline() = default;

    static CubicSpline fit(std::vector<double> knots, std::vector<double> values) {
        const std::size_t m = knots.size();
        if (m < 2 || values.size() != m)
            throw std::invalid_argument("CubicSpline::fit: need >= 2 knots and matching values");
        for (std::size_t i = 0; i + 1 < m; ++i)
            if (!(knots[i] < knots[i + 1]))
                throw std::invalid_argument("CubicSpline::fit: knots must be strictly increasing");

        const std::size_t n = m - 1; // interval count
        std::vector<double> dx(n), slope(n);
        for (std::size_t i = 0; i < n; ++i) {
            dx[i] = knots[i + 1] - knots[i];
            slope[i] = (values[i + 1] - values[i]) / dx[i];
        }

        std::vector<double> s = knot_slopes(knots, dx, slope);

        CubicSpline out;
        out.knots_ = std::move(knots);
        out.values_ = std::move(values);
        out.pieces_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            Piece& p = out.pieces_[i];
            p.c0 = out.values_[i];
            p.c1 = s[i];
            p.c2 = (3.0 * slope[i] - 2.0 * s[i] - s[i + 1]) / dx[i];
            p.c3 = (s[i] + s[i + 1] - 2.0 * slope[i]) / (dx[i] * dx[i]);
        }
        return out;
    }

    double operator()(double x) const { return eval(x, 0); }

    /// d-th derivative, d in {0, 1, 2, 3}. Piecewise constant for d = 3.
    double derivative(double x, int d) const { return eval(x, d); }

    const std::vector<double>& knots() const { return knots_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<Piece>& pieces() const { return pieces_; }

    double min_x() const { return knots_.front(); }
    double max_x() const { return knots_.back(); }

    bool operator==(const CubicSpline&) const = default;

private:
    std::vector<double> knots_;
    std::vector<double> values_;
    std::vector<Piece> pieces_;

    std::size_t locate(double x) const {
        if (x < knots_.front() || x > knots_.back())
            throw std::domain_error("CubicSpline: evaluation outside the knot range");
        auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
        std::size_t idx = static_cast<std::size_t>(it - knots_.begin());
        if (idx > 0) --idx;
        return std::min(idx, pieces_.size() - 1);
    }

    double eval(double x, int d) const {
        const std::size_t i = locate(x);
        const Piece& p = pieces_[i];
        const double t = x - knots_[i];
        switch (d) {
            case 0: return p.c0 + t * (p.c1 + t * (p.c2 + t * p.c3));
            case 1: return p.c1 + t * (2.0 * p.c2 + t * 3.0 * p.c3);
            case 2: return 2.0 * p.c2 + 6.0 * p.c3 * t;
            case 3: return 6.0 * p.c3;
            default: throw std::invalid_argument("CubicSpline: derivative order must be 0..3");
        }
    }

    static std::vector<double> knot_slopes(const std::vector<double>& x,
                                           const std::vector<double>& dx,
                                           const std::vector<double>& slope) {
        const std::size_t n = dx.size();
        if (n == 1)
            return {slope[0], slope[0]};

        std::vector<double> lower(n + 1, 0.0), diag(n + 1, 0.0), upper(n + 1, 0.0), rhs(n + 1, 0.0);
        for (std::size_t i = 1; i < n; ++i) {
            lower[i] = dx[i];
            diag[i] = 2.0 * (dx[i - 1] + dx[i]);
            upper[i] = dx[i - 1];
            rhs[i] = 3.0 * (dx[i] * slope[i - 1] + dx[i - 1] * slope[i]);
        }

        if (n == 2) {
            // Parabola through three points.
            diag[0] = 1.0;
            upper[0] = 1.0;
            rhs[0] = 2.0 * slope[0];
            lower[2] = 1.0;
            diag[2] = 1.0;
            rhs[2] = 2.0 * slope[1];
        } else {
            double d0 = x[2] - x[0];
            diag[0] = dx[1];
            upper[0] = d0;
            rhs[0] = ((dx[0] + 2.0 * d0) * dx[1] * slope[0] + dx[0] * dx[0] * slope[1]) / d0;

            double dn = x[n] - x[n - 2];
            diag[n] = dx[n - 2];
            lower[n] = dn;
            rhs[n] = (dx[n - 1] * dx[n - 1] * slope[n - 2] +
                      (2.0 * dn + dx[n - 1]) * dx[n - 2] * slope[n - 1]) / dn;
        }

        return thomas_solve(lower, diag, upper, rhs);
    }
};

/// A randomly sampled initial condition: i.i.d. uniform interior knot values
/// on [a, b], endpoint knots pinned to u_bc, interpolated by a not-a-knot
/// cubic spline. The spline object is what a trial holds on to; resampling
/// it at other resolutions keeps the underlying random function fixed.
struct ICSpline {
    std::uint64_t seed = 0;
    std::size_t n_x = 0;          // interior knot count used for sampling
    double lo = 0.0, hi = 0.0;    // sampling interval [a, b]
    double u_bc = 0.0;            // endpoint knot value
    std::vector<double> knots;    // n_x + 2 abscissae on [-L, L]
    std::vector<double> values;   // sampled values, endpoints = u_bc
    CubicSpline spline;

    bool operator==(const ICSpline&) const = default;
};

/// Endpoint knot value for a boundary spec. Dirichlet pins the sampled IC to
/// u_BC; for homogeneous Neumann the construction still needs an endpoint
/// value and uses the midpoint of [a, b] (the Neumann condition constrains
/// the evolution's flux, not the IC knots).
inline double ic_endpoint_value(const BoundarySpec& boundary, double lo, double hi) {
    return boundary.is_dirichlet() ? boundary.value : 0.5 * (lo + hi);
}

inline ICSpline sample_random_ic(std::uint64_t seed, std::size_t n_x, double lo, double hi,
                                 const BoundarySpec& boundary, double half_width = 1.0) {
    if (!(lo < hi)) throw std::invalid_argument("sample_random_ic: need a < b");
    if (n_x < 1) throw std::invalid_argument("sample_random_ic: n_x must be >= 1");
    if (half_width <= 0.0) throw std::invalid_argument("sample_random_ic: half_width must be > 0");

    ICSpline ic;
    ic.seed = seed;
    ic.n_x = n_x;
    ic.lo = lo;
    ic.hi = hi;
    ic.u_bc = ic_endpoint_value(boundary, lo, hi);

    const double dx = 2.0 * half_width / static_cast<double>(n_x + 1);
    ic.knots.resize(n_x + 2);
    for (std::size_t i = 0; i < ic.knots.size(); ++i)
        ic.knots[i] = -half_width + static_cast<double>(i) * dx;
    ic.knots.front() = -half_width;
    ic.knots.back() = half_width;

    std::mt19937_64 engine(seed);
    ic.values.resize(n_x + 2);
    ic.values.front() = ic.values.back() = ic.u_bc;
    for (std::size_t i = 1; i <= n_x; ++i)
        ic.values[i] = uniform(engine, lo, hi);

    ic.spline = CubicSpline::fit(ic.knots, ic.values);
    return ic;
}

/// Build an ICSpline around externally supplied knot values (replayed ICs,
/// analytic test profiles). Endpoints are taken as given.
inline ICSpline ic_from_values(std::vector<double> knots, std::vector<double> values) {
    if (knots.size() < 3 || values.size() != knots.size())
        throw std::invalid_argument("ic_from_values: need >= 3 matching knots/values");
    ICSpline ic;
    ic.n_x = knots.size() - 2;
    ic.u_bc = values.front();
    ic.lo = *std::min_element(values.begin() + 1, values.end() - 1);
    ic.hi = *std::max_element(values.begin() + 1, values.end() - 1);
    ic.knots = std::move(knots);
    ic.values = std::move(values);
    ic.spline = CubicSpline::fit(ic.knots, ic.values);
    return ic;
}

/// Evaluate the stored random function on a new uniform grid with n_x_new
/// interior points. Returns n_x_new + 2 values; the endpoints are u_bc, the
/// interior is S(x_j). The spline itself never changes, so resolution sweeps
/// share one random function per trial.
inline std::vector<double> resample_ic(const ICSpline& ic, std::size_t n_x_new) {
    if (n_x_new < 1) throw std::invalid_argument("resample_ic: n_x_new must be >= 1");

    const double half_width = ic.knots.back();
    const double dx = 2.0 * half_width / static_cast<double>(n_x_new + 1);
    std::vector<double> out(n_x_new + 2);
    out.front() = out.back() = ic.u_bc;
    for (std::size_t j = 1; j <= n_x_new; ++j)
        out[j] = ic.spline(-half_width + static_cast<double>(j) * dx);
    return out;
}

/// Interior part of a resample, ready to feed a solver.
inline std::vector<double> resample_interior(const ICSpline& ic, std::size_t n_x_new) {
    auto full = resample_ic(ic, n_x_new);
    return {full.begin() + 1, full.end() - 1};
}

} // namespace pdeseq
