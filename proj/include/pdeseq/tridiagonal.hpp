#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pdeseq/errors.hpp"

namespace pdeseq {

/// Thomas algorithm for A x = rhs with A tridiagonal.
/// lower[i] multiplies x[i-1] (lower[0] ignored), diag[i] multiplies x[i],
/// upper[i] multiplies x[i+1] (upper[n-1] ignored). No pivoting: intended
/// for the diagonally dominant systems produced by I - mu * d2/dx2 and for
/// the (uniform-knot) spline systems, which eliminate stably.
inline std::vector<double> thomas_solve(std::span<const double> lower,
                                        std::span<const double> diag,
                                        std::span<const double> upper,
                                        std::span<const double> rhs) {
    const std::size_t n = diag.size();
    if (n == 0 || lower.size() != n || upper.size() != n || rhs.size() != n)
        throw std::invalid_argument("thomas_solve: bands and rhs must share one size >= 1");

    std::vector<double> scratch_upper(n), x(n);
    double pivot = diag[0];
    if (pivot == 0.0 || !std::isfinite(pivot))
        throw SingularSystemError("thomas_solve: zero pivot at row 0");
    scratch_upper[0] = upper[0] / pivot;
    x[0] = rhs[0] / pivot;

    for (std::size_t i = 1; i < n; ++i) {
        pivot = diag[i] - lower[i] * scratch_upper[i - 1];
        if (pivot == 0.0 || !std::isfinite(pivot))
            throw SingularSystemError("thomas_solve: zero pivot at row " + std::to_string(i));
        scratch_upper[i] = upper[i] / pivot;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / pivot;
    }

    for (std::size_t i = n - 1; i-- > 0;)
        x[i] -= scratch_upper[i] * x[i + 1];

    return x;
}

} // namespace pdeseq
