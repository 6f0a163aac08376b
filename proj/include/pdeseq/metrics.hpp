#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdeseq/distribution.hpp"
#include "pdeseq/matrix.hpp"
#include "pdeseq/spline.hpp"
#include "pdeseq/stats.hpp"

namespace pdeseq {

/// One value-token position of a generated slice, as needed for the
/// uncertainty analysis.
struct DistributionRecord {
    std::size_t index = 0;          // spatial position, 0-based
    PositionDistribution dist;
    bool separator = false;
};

inline void check_same_shape(const Matrix<double>& a, const Matrix<double>& b, const char* who) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(who) + ": shape mismatch");
    if (a.rows() == 0 || a.cols() == 0)
        throw std::invalid_argument(std::string(who) + ": empty fields");
}

/// Root mean square error over space, one value per time column.
inline std::vector<double> rmse_per_step(const Matrix<double>& predicted,
                                         const Matrix<double>& reference) {
    check_same_shape(predicted, reference, "rmse_per_step");
    std::vector<double> out(predicted.cols());
    for (std::size_t j = 0; j < predicted.cols(); ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < predicted.rows(); ++i) {
            const double e = predicted(i, j) - reference(i, j);
            sq += e * e;
        }
        out[j] = std::sqrt(sq / static_cast<double>(predicted.rows()));
    }
    return out;
}

/// Worst-case absolute deviation over space, one value per time column.
inline std::vector<double> maxae_per_step(const Matrix<double>& predicted,
                                          const Matrix<double>& reference) {
    check_same_shape(predicted, reference, "maxae_per_step");
    std::vector<double> out(predicted.cols());
    for (std::size_t j = 0; j < predicted.cols(); ++j) {
        double mx = 0.0;
        for (std::size_t i = 0; i < predicted.rows(); ++i)
            mx = std::max(mx, std::abs(predicted(i, j) - reference(i, j)));
        out[j] = mx;
    }
    return out;
}

enum class EntropyLog { Nat, Bits };

/// Mean spatial entropy of one generated slice. Remote endpoints expose only
/// the top-k tail, so the remainder bucket is treated as a single outcome;
/// the result then lower-bounds the full-vocabulary entropy and is marked
/// as such whenever meaningful remainder mass was present.
struct EntropyResult {
    double value = 0.0;
    std::size_t k = 0;        // largest top-k seen across positions
    bool lower_bound = false; // remainder mass > 1e-6 somewhere
};

inline double position_entropy(const PositionDistribution& d, EntropyLog units) {
    double h = 0.0;
    for (const auto& e : d.entries)
        if (e.prob > 0.0) h -= e.prob * std::log(e.prob);
    if (d.remainder > 0.0) h -= d.remainder * std::log(d.remainder);
    if (units == EntropyLog::Bits) h /= std::log(2.0);
    return h;
}

inline EntropyResult mean_entropy(std::span<const DistributionRecord> records, std::size_t n_x,
                                  EntropyLog units = EntropyLog::Nat) {
    if (n_x == 0) throw std::invalid_argument("mean_entropy: n_x must be >= 1");
    std::vector<bool> seen(n_x, false);
    EntropyResult out;
    double sum = 0.0;
    for (const auto& r : records) {
        if (r.separator) continue;
        if (r.index >= n_x || seen[r.index])
            throw std::invalid_argument("mean_entropy: duplicate or out-of-range position");
        seen[r.index] = true;
        sum += position_entropy(r.dist, units);
        out.k = std::max(out.k, r.dist.entries.size());
        if (r.dist.remainder > 1e-6) out.lower_bound = true;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
        throw std::invalid_argument("mean_entropy: records must cover every value position");
    out.value = sum / static_cast<double>(n_x);
    return out;
}

/// Discrete total energy of one interior slice under homogeneous Neumann
/// walls: boundary values come from the second-order zero-flux
/// reconstruction u_0 = (4u_1 - u_2)/3 (mirrored on the right) and the
/// quadrature uses trapezoidal weights dx/2 at the walls, dx inside.
inline double neumann_energy(std::span<const double> interior, double dx) {
    if (interior.size() < 2)
        throw std::invalid_argument("neumann_energy: need at least two interior points");
    const std::size_t n = interior.size();
    const double left = (4.0 * interior[0] - interior[1]) / 3.0;
    const double right = (4.0 * interior[n - 1] - interior[n - 2]) / 3.0;
    double sum = 0.5 * (left + right);
    for (double v : interior) sum += v;
    return sum * dx;
}

/// High-resolution trapezoidal quadrature of a continuous initial condition;
/// the conserved value the rollout deviations are measured against.
inline double ic_energy(const CubicSpline& s, std::size_t intervals = 1 << 14) {
    const double a = s.min_x(), b = s.max_x();
    const double h = (b - a) / static_cast<double>(intervals);
    double sum = 0.5 * (s(a) + s(b));
    for (std::size_t i = 1; i < intervals; ++i)
        sum += s(a + static_cast<double>(i) * h);
    return sum * h;
}

/// Per-step relative energy deviation in percent. Columns of `fields` are
/// interior slices over time.
inline std::vector<double> energy_deviation(const Matrix<double>& fields, double dx, double e0) {
    if (std::abs(e0) <= 1e-6)
        throw std::domain_error("energy_deviation: |E(0)| <= 1e-6, relative deviation degenerate");
    std::vector<double> out(fields.cols());
    for (std::size_t j = 0; j < fields.cols(); ++j)
        out[j] = 100.0 * std::abs(neumann_energy(fields.col(j), dx) - e0) / std::abs(e0);
    return out;
}

/// One sample of the error-correlate diagnostics: absolute error against the
/// local value and the finite-difference derivative magnitudes of the
/// prediction (central stencils inside, one-sided at the window edges).
struct CorrelateRecord {
    std::size_t i = 0;
    std::size_t j = 0;
    double abs_error = 0.0;
    double value = 0.0;
    double abs_dudx = 0.0;
    double abs_dudt = 0.0;
};

inline std::vector<CorrelateRecord> error_correlates(const Matrix<double>& predicted,
                                                     const Matrix<double>& reference,
                                                     double dx, double dt) {
    check_same_shape(predicted, reference, "error_correlates");
    if (predicted.cols() < 2)
        throw std::invalid_argument("error_correlates: need >= 2 steps for the temporal stencil");

    const std::size_t nx = predicted.rows(), nt = predicted.cols();
    auto ddx = [&](std::size_t i, std::size_t j) {
        if (nx == 1) return 0.0;
        if (i == 0) return (predicted(1, j) - predicted(0, j)) / dx;
        if (i == nx - 1) return (predicted(nx - 1, j) - predicted(nx - 2, j)) / dx;
        return (predicted(i + 1, j) - predicted(i - 1, j)) / (2.0 * dx);
    };
    auto ddt = [&](std::size_t i, std::size_t j) {
        if (j == 0) return (predicted(i, 1) - predicted(i, 0)) / dt;
        if (j == nt - 1) return (predicted(i, nt - 1) - predicted(i, nt - 2)) / dt;
        return (predicted(i, j + 1) - predicted(i, j - 1)) / (2.0 * dt);
    };

    std::vector<CorrelateRecord> out;
    out.reserve(nx * nt);
    for (std::size_t j = 0; j < nt; ++j)
        for (std::size_t i = 0; i < nx; ++i)
            out.push_back({i, j, std::abs(predicted(i, j) - reference(i, j)), predicted(i, j),
                           std::abs(ddx(i, j)), std::abs(ddt(i, j))});
    return out;
}

/// Truncate each position's distribution to its k most probable tokens.
/// Positions with fewer than k entries return their full support.
inline std::vector<std::vector<TokenProb>> topk_table(std::span<const PositionDistribution> records,
                                                      std::size_t k) {
    if (k == 0) throw std::invalid_argument("topk_table: k must be >= 1");
    std::vector<std::vector<TokenProb>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto sorted = r.entries;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const TokenProb& a, const TokenProb& b) { return a.prob > b.prob; });
        if (sorted.size() > k) sorted.resize(k);
        out.push_back(std::move(sorted));
    }
    return out;
}

} // namespace pdeseq
