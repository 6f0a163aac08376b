#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdeseq/errors.hpp"
#include "pdeseq/grid.hpp"
#include "pdeseq/matrix.hpp"
#include "pdeseq/pde.hpp"
#include "pdeseq/spline.hpp"
#include "pdeseq/tridiagonal.hpp"

namespace pdeseq {

/// Interior-only solution matrix: rows are the n_x interior points, columns
/// the n_t + 1 time levels; column 0 is the initial condition. Boundary
/// values are imposed by the stencils, never stored.
struct SolutionField {
    Matrix<double> values;
    SpatialGrid space;
    TimeGrid time;
    PDESpec pde;
};

inline double divergence_bound() { return 1e6; }

/// Boundary values entering a stencil. Dirichlet walls stay pinned at u_BC;
/// homogeneous Neumann walls use the second-order zero-flux reconstruction
/// u_0 = (4u_1 - u_2)/3, the same formula the energy diagnostics apply
/// post hoc.
inline std::pair<double, double> boundary_values(const BoundarySpec& bc,
                                                 std::span<const double> interior) {
    if (bc.is_dirichlet()) return {bc.value, bc.value};
    const std::size_t n = interior.size();
    if (n == 1) return {interior[0], interior[0]};
    return {(4.0 * interior[0] - interior[1]) / 3.0,
            (4.0 * interior[n - 1] - interior[n - 2]) / 3.0};
}

/// Second difference (u_{i-1} - 2 u_i + u_{i+1}) / dx^2 with boundary fill.
inline std::vector<double> second_difference(std::span<const double> u, const BoundarySpec& bc,
                                             double dx) {
    const std::size_t n = u.size();
    const auto [left, right] = boundary_values(bc, u);
    std::vector<double> out(n);
    const double inv = 1.0 / (dx * dx);
    for (std::size_t i = 0; i < n; ++i) {
        const double um = i == 0 ? left : u[i - 1];
        const double up = i + 1 == n ? right : u[i + 1];
        out[i] = (um - 2.0 * u[i] + up) * inv;
    }
    return out;
}

namespace detail {

// Solve (I - mu * d2/dx2) x = rhs for the implicit schemes. `mu` already
// includes the 1/dx^2 factor. Dirichlet walls contribute mu * u_BC to the
// first/last rows; Neumann walls fold the ghost formula into the band.
inline std::vector<double> implicit_diffusion_solve(std::vector<double> rhs, double mu,
                                                    const BoundarySpec& bc) {
    const std::size_t n = rhs.size();
    std::vector<double> lower(n, -mu), diag(n, 1.0 + 2.0 * mu), upper(n, -mu);
    lower[0] = 0.0;
    upper[n - 1] = 0.0;
    if (bc.is_dirichlet()) {
        rhs[0] += mu * bc.value;
        rhs[n - 1] += mu * bc.value;
    } else if (n == 1) {
        diag[0] = 1.0; // mirrored ghosts cancel the whole stencil
    } else {
        diag[0] = 1.0 + 2.0 / 3.0 * mu;
        upper[0] = -2.0 / 3.0 * mu;
        diag[n - 1] = 1.0 + 2.0 / 3.0 * mu;
        lower[n - 1] = -2.0 / 3.0 * mu;
    }
    return thomas_solve(lower, diag, upper, rhs);
}

inline void check_finite(std::span<const double> u, SchemeId scheme, std::size_t step) {
    for (double v : u)
        if (!std::isfinite(v) || std::abs(v) > divergence_bound())
            throw DivergenceError("scheme '" + scheme_name(scheme) + "' diverged at step " +
                                  std::to_string(step));
}

} // namespace detail

/// State feeding one step: the current column, plus the previous one for the
/// three-level wave schemes.
struct StepState {
    std::span<const double> current;
    std::span<const double> previous = {};
};

/// One time step of the chosen scheme. Returns the next interior column.
inline std::vector<double> advance(const PDESpec& pde, SchemeId scheme, const StepState& state,
                                   const SpatialGrid& space, const TimeGrid& time,
                                   std::size_t step_index = 0) {
    const std::size_t n = state.current.size();
    if (n != space.n_x)
        throw std::invalid_argument("advance: state length must equal n_x");
    const double dx = space.dx, dt = time.dt;
    const double coef = pde.diffusion_coefficient();
    std::vector<double> next(n);

    switch (scheme) {
        case SchemeId::Ftcs: {
            const auto d2 = second_difference(state.current, pde.boundary, dx);
            for (std::size_t i = 0; i < n; ++i)
                next[i] = state.current[i] + dt * (coef * d2[i] - pde.reaction(state.current[i]));
            break;
        }
        case SchemeId::Imex:
        case SchemeId::Btcs: {
            std::vector<double> rhs(n);
            for (std::size_t i = 0; i < n; ++i)
                rhs[i] = state.current[i] - dt * pde.reaction(state.current[i]);
            next = detail::implicit_diffusion_solve(std::move(rhs), coef * dt / (dx * dx),
                                                    pde.boundary);
            break;
        }
        case SchemeId::LeapfrogWave: {
            if (state.previous.size() != n)
                throw std::invalid_argument("advance: leapfrog needs two previous columns");
            const auto d2 = second_difference(state.current, pde.boundary, dx);
            for (std::size_t i = 0; i < n; ++i)
                next[i] = 2.0 * state.current[i] - state.previous[i] + coef * dt * dt * d2[i];
            break;
        }
        case SchemeId::CrankNicolsonWave: {
            // (u+ - 2u + u-) / dt^2 = (c^2/2) (d2 u+ + d2 u-)
            if (state.previous.size() != n)
                throw std::invalid_argument("advance: crank_nicolson needs two previous columns");
            const double mu = 0.5 * coef * dt * dt / (dx * dx);
            const auto d2_prev = second_difference(state.previous, pde.boundary, dx);
            std::vector<double> rhs(n);
            for (std::size_t i = 0; i < n; ++i)
                rhs[i] = 2.0 * state.current[i] - state.previous[i] +
                         0.5 * coef * dt * dt * d2_prev[i];
            next = detail::implicit_diffusion_solve(std::move(rhs), mu, pde.boundary);
            break;
        }
    }

    detail::check_finite(next, scheme, step_index);
    return next;
}

/// Taylor first step for the wave equation with zero initial velocity:
/// u^1 = u^0 + (c^2 dt^2 / 2) d2 u^0.
inline std::vector<double> wave_startup(const PDESpec& pde, std::span<const double> ic,
                                        const SpatialGrid& space, const TimeGrid& time) {
    const auto d2 = second_difference(ic, pde.boundary, space.dx);
    std::vector<double> out(ic.size());
    const double half = 0.5 * pde.diffusion_coefficient() * time.dt * time.dt;
    for (std::size_t i = 0; i < ic.size(); ++i)
        out[i] = ic[i] + half * d2[i];
    return out;
}

/// March the full grid. Column 0 is the (already resampled) interior IC.
inline SolutionField solve(const PDESpec& pde, SchemeId scheme, std::span<const double> ic,
                           const SpatialGrid& space, const TimeGrid& time) {
    pde.validate();
    if (!scheme_compatible(scheme, pde))
        throw std::invalid_argument("solve: scheme '" + scheme_name(scheme) +
                                    "' does not apply to pde '" + pde.name() + "'");
    if (ic.size() != space.n_x)
        throw std::invalid_argument("solve: ic length must equal n_x");

    SolutionField field{Matrix<double>(space.n_x, time.n_t + 1), space, time, pde};
    field.values.set_col(0, ic);

    std::size_t start = 1;
    if (pde.second_order_in_time()) {
        const auto first = wave_startup(pde, ic, space, time);
        detail::check_finite(first, scheme, 1);
        field.values.set_col(1, first);
        start = 2;
    }
    for (std::size_t j = start; j <= time.n_t; ++j) {
        StepState state{field.values.col(j - 1)};
        if (pde.second_order_in_time()) state.previous = field.values.col(j - 2);
        field.values.set_col(j, advance(pde, scheme, state, space, time, j));
    }
    return field;
}

/// Explicit-scheme stability ratio: the diffusion number coef dt / dx^2 for
/// first-order families, the CFL number c dt / dx for the wave equation.
inline double stability_ratio(const PDESpec& pde, double dx, double dt) {
    if (pde.second_order_in_time())
        return std::sqrt(pde.diffusion_coefficient()) * dt / dx;
    return pde.diffusion_coefficient() * dt / (dx * dx);
}

inline double stability_limit(const PDESpec& pde) {
    return pde.second_order_in_time() ? 0.5 : 0.25;
}

/// Scheme used for refined reference solves: the canonical explicit one.
inline SchemeId reference_scheme(const PDESpec& pde) {
    return pde.second_order_in_time() ? SchemeId::LeapfrogWave : SchemeId::Ftcs;
}

/// Smallest power-of-two temporal refinement >= at_least that keeps the
/// refined explicit solve stable at spatial refinement refine_x.
inline std::size_t stable_refine_t(const PDESpec& pde, const SpatialGrid& space,
                                   const TimeGrid& time, std::size_t refine_x,
                                   std::size_t at_least = 1) {
    std::size_t r = 1;
    while (r < at_least) r *= 2;
    const double dx_fine = space.dx / static_cast<double>(refine_x);
    while (stability_ratio(pde, dx_fine, time.dt / static_cast<double>(r)) >
           stability_limit(pde)) {
        r *= 2;
        if (r > (std::size_t{1} << 30))
            throw StabilityError("stable_refine_t: no feasible temporal refinement");
    }
    return r;
}

/// Reference trajectory: solve on a grid refined by (refine_x, refine_t) and
/// restrict to the coarse nodes, which by construction coincide with refined
/// nodes (no interpolation). The refined IC is the trial's spline resampled
/// at the fine resolution.
inline SolutionField reference_solution(const PDESpec& pde, const ICSpline& ic,
                                        const SpatialGrid& space, const TimeGrid& time,
                                        std::size_t refine_x, std::size_t refine_t) {
    if (refine_x < 1 || refine_t < 1)
        throw std::invalid_argument("reference_solution: refinements must be >= 1");

    const std::size_t n_x_fine = refine_x * (space.n_x + 1) - 1;
    const std::size_t n_t_fine = refine_t * time.n_t;
    auto [space_fine, time_fine] =
        build_grids(space.half_width, n_x_fine, time.final_time, n_t_fine);

    const double ratio = stability_ratio(pde, space_fine.dx, time_fine.dt);
    if (ratio > stability_limit(pde))
        throw StabilityError("reference_solution: stability ratio " + std::to_string(ratio) +
                             " exceeds " + std::to_string(stability_limit(pde)) +
                             "; increase refine_t");

    const auto ic_fine = resample_ic(ic, n_x_fine);
    const std::span<const double> interior(ic_fine.data() + 1, n_x_fine);
    const SolutionField fine = solve(pde, reference_scheme(pde), interior, space_fine, time_fine);

    SolutionField coarse{Matrix<double>(space.n_x, time.n_t + 1), space, time, pde};
    for (std::size_t j = 0; j <= time.n_t; ++j)
        for (std::size_t i = 0; i < space.n_x; ++i)
            coarse.values(i, j) = fine.values(refine_x * (i + 1) - 1, refine_t * j);
    return coarse;
}

} // namespace pdeseq
