#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdeseq {

/// Uniform spatial grid on [-L, L] with n_x interior points.
/// points[0] and points[n_x + 1] are the boundary nodes; spacing is
/// dx = 2L / (n_x + 1).
struct SpatialGrid {
    double half_width = 1.0;      // L
    std::size_t n_x = 0;          // interior point count
    double dx = 0.0;
    std::vector<double> points;   // n_x + 2 nodes, strictly increasing

    double interior(std::size_t i) const { return points[i + 1]; } // i in [0, n_x)
};

/// Uniform time grid t_j = j * dt, j = 0..n_t, with dt = T / n_t.
struct TimeGrid {
    double final_time = 0.0;      // T
    std::size_t n_t = 0;          // step count
    double dt = 0.0;
    std::vector<double> levels;   // n_t + 1 levels
};

/// Boundary condition attached to a PDE problem. Dirichlet pins both
/// endpoints to `value`; homogeneous Neumann imposes zero flux.
struct BoundarySpec {
    enum class Kind { Dirichlet, NeumannHomogeneous };

    Kind kind = Kind::Dirichlet;
    double value = 0.0;           // u_BC, Dirichlet only

    static BoundarySpec dirichlet(double value) { return {Kind::Dirichlet, value}; }
    static BoundarySpec neumann() { return {Kind::NeumannHomogeneous, 0.0}; }

    bool is_dirichlet() const { return kind == Kind::Dirichlet; }
    bool operator==(const BoundarySpec&) const = default;
};

inline std::pair<SpatialGrid, TimeGrid> build_grids(double half_width, std::size_t n_x,
                                                    double final_time, std::size_t n_t) {
    if (half_width <= 0.0) throw std::invalid_argument("build_grids: half_width must be > 0");
    if (final_time <= 0.0) throw std::invalid_argument("build_grids: final_time must be > 0");
    if (n_x < 1) throw std::invalid_argument("build_grids: n_x must be >= 1");
    if (n_t < 1) throw std::invalid_argument("build_grids: n_t must be >= 1");

    SpatialGrid space;
    space.half_width = half_width;
    space.n_x = n_x;
    space.dx = 2.0 * half_width / static_cast<double>(n_x + 1);
    space.points.resize(n_x + 2);
    for (std::size_t i = 0; i < space.points.size(); ++i)
        space.points[i] = -half_width + static_cast<double>(i) * space.dx;
    // Pin the endpoints exactly; accumulated rounding must not move the walls.
    space.points.front() = -half_width;
    space.points.back() = half_width;

    TimeGrid time;
    time.final_time = final_time;
    time.n_t = n_t;
    time.dt = final_time / static_cast<double>(n_t);
    time.levels.resize(n_t + 1);
    for (std::size_t j = 0; j <= n_t; ++j)
        time.levels[j] = static_cast<double>(j) * time.dt;
    time.levels.back() = final_time;

    return {std::move(space), std::move(time)};
}

} // namespace pdeseq
