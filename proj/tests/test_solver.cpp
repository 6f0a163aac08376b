#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "pdeseq/solver.hpp"

using namespace pdeseq;

namespace {

constexpr double pi = std::numbers::pi;

std::vector<double> sine_mode(const SpatialGrid& space) {
    std::vector<double> u(space.n_x);
    for (std::size_t i = 0; i < space.n_x; ++i)
        u[i] = std::sin(0.5 * pi * (space.interior(i) + space.half_width) / space.half_width);
    return u;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Observed order from three solutions of one ODE-in-time family at dt,
// dt/2, dt/4 on a shared grid.
double temporal_order(const PDESpec& pde, SchemeId scheme, std::size_t n_t_base) {
    auto [space, time1] = build_grids(1.0, 14, 0.4, n_t_base);
    auto ic = sine_mode(space);
    std::vector<SolutionField> runs;
    for (std::size_t mult : {1u, 2u, 4u}) {
        auto [s2, time] = build_grids(1.0, 14, 0.4, n_t_base * mult);
        runs.push_back(solve(pde, scheme, ic, space, time));
    }
    const double e1 = max_abs_diff(runs[0].values.col(n_t_base),
                                   runs[1].values.col(2 * n_t_base));
    const double e2 = max_abs_diff(runs[1].values.col(2 * n_t_base),
                                   runs[2].values.col(4 * n_t_base));
    return std::log2(e1 / e2);
}

// Observed spatial order from nested grids at a fixed stability ratio.
double spatial_order(const PDESpec& pde, SchemeId scheme, std::size_t n_t_base, double t_final) {
    std::vector<SolutionField> runs;
    std::vector<std::size_t> n_x_list{9, 19, 39};
    for (std::size_t level = 0; level < 3; ++level) {
        const std::size_t factor = std::size_t{1} << level;
        const std::size_t n_t = pde.second_order_in_time() ? n_t_base * factor
                                                           : n_t_base * factor * factor;
        auto [space, time] = build_grids(1.0, n_x_list[level], t_final, n_t);
        std::vector<double> ic(space.n_x);
        for (std::size_t i = 0; i < space.n_x; ++i)
            ic[i] = std::sin(0.5 * pi * (space.interior(i) + 1.0));
        runs.push_back(solve(pde, scheme, ic, space, time));
    }
    // coarse interior node i coincides with fine node 2i + 1
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        e1 = std::max(e1, std::abs(runs[0].values(i, runs[0].time.n_t) -
                                   runs[1].values(2 * i + 1, runs[1].time.n_t)));
    }
    for (std::size_t i = 0; i < 19; ++i) {
        e2 = std::max(e2, std::abs(runs[1].values(i, runs[1].time.n_t) -
                                   runs[2].values(2 * i + 1, runs[2].time.n_t)));
    }
    return std::log2(e1 / e2);
}

} // namespace

TEST_CASE("flat Allen-Cahn field at the well is stationary") {
    auto [space, time] = build_grids(1.0, 14, 0.5, 25);
    auto pde = PDESpec::allen_cahn();
    std::vector<double> flat(14, -1.0);
    for (SchemeId scheme : {SchemeId::Ftcs, SchemeId::Imex}) {
        auto field = solve(pde, scheme, flat, space, time);
        for (std::size_t j = 0; j <= 25; ++j)
            for (std::size_t i = 0; i < 14; ++i)
                CHECK(field.values(i, j) == Catch::Approx(-1.0).margin(1e-13));
    }
}

TEST_CASE("single-point heat stencil arithmetic") {
    auto [space, time] = build_grids(1.0, 1, 1.0, 10);
    auto pde = PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0));
    std::vector<double> u{1.0};
    auto next = advance(pde, SchemeId::Ftcs, StepState{u}, space, time);
    const double expected = 1.0 - 2.0 * 0.01 * time.dt / (space.dx * space.dx);
    CHECK(next[0] == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("FTCS beyond the diffusion limit amplifies") {
    auto [space, time] = build_grids(1.0, 14, 0.32, 30); // r_d = k dt/dx^2 ~ 0.6
    auto pde = PDESpec::heat(1.0, BoundarySpec::dirichlet(0.0));
    CHECK(stability_ratio(pde, space.dx, time.dt) > 0.5);
    auto ic = sample_random_ic(17, 14, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    auto field = solve(pde, SchemeId::Ftcs, resample_interior(ic, ic.n_x), space, time);
    auto amp = [&](std::size_t j) {
        double m = 0.0;
        for (std::size_t i = 0; i < 14; ++i) m = std::max(m, std::abs(field.values(i, j)));
        return m;
    };
    CHECK(amp(30) > 10.0 * amp(10));
    CHECK(amp(10) > amp(0));
}

TEST_CASE("boundary fill honors the spec of each wall") {
    std::vector<double> u{0.4, 0.1, -0.2};
    auto [dl, dr] = boundary_values(BoundarySpec::dirichlet(-1.0), u);
    CHECK(dl == -1.0);
    CHECK(dr == -1.0);
    auto [nl, nr] = boundary_values(BoundarySpec::neumann(), u);
    CHECK(nl == Catch::Approx((4.0 * 0.4 - 0.1) / 3.0).epsilon(1e-15));
    CHECK(nr == Catch::Approx((4.0 * -0.2 - 0.1) / 3.0).epsilon(1e-15));
}

TEST_CASE("wave leapfrog preserves reflection symmetry") {
    auto [space, time] = build_grids(1.0, 15, 1.0, 40);
    auto pde = PDESpec::wave(0.2, BoundarySpec::dirichlet(0.0));
    std::vector<double> ic(space.n_x);
    for (std::size_t i = 0; i < space.n_x; ++i) {
        const double x = space.interior(i);
        ic[i] = 1.0 - x * x;
    }
    auto field = solve(pde, SchemeId::LeapfrogWave, ic, space, time);
    for (std::size_t j = 0; j <= 40; ++j)
        for (std::size_t i = 0; i < space.n_x; ++i)
            CHECK(std::abs(field.values(i, j) - field.values(space.n_x - 1 - i, j)) <= 1e-12);
}

TEST_CASE("BTCS reproduces the analytic eigenmode decay") {
    auto [space, time] = build_grids(1.0, 39, 0.5, 25);
    auto pde = PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0));
    auto ic = sine_mode(space);
    auto field = solve(pde, SchemeId::Btcs, ic, space, time);
    const double kappa = 0.5 * pi;
    const double decay = std::exp(-0.01 * kappa * kappa * 0.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < space.n_x; ++i)
        worst = std::max(worst, std::abs(field.values(i, 25) - decay * ic[i]));
    CHECK(worst <= 1e-3 * decay);
}

TEST_CASE("IMEX agrees with FTCS at refined dt") {
    auto [space, time_a] = build_grids(1.0, 14, 0.5, 200);
    auto [s2, time_b] = build_grids(1.0, 14, 0.5, 400);
    auto pde = PDESpec::allen_cahn();
    auto ic_spline = sample_random_ic(3, 14, -0.5, 0.5, BoundarySpec::dirichlet(-1.0));
    auto ic = resample_interior(ic_spline, ic_spline.n_x);

    auto gap = [&](const TimeGrid& time) {
        auto a = solve(pde, SchemeId::Ftcs, ic, space, time);
        auto b = solve(pde, SchemeId::Imex, ic, space, time);
        double m = 0.0;
        for (std::size_t j = 0; j <= time.n_t; ++j)
            m = std::max(m, max_abs_diff(a.values.col(j), b.values.col(j)));
        return m;
    };
    const double gap_coarse = gap(time_a);
    const double gap_fine = gap(time_b);
    CHECK(gap_coarse < 0.01);
    CHECK(gap_fine < 0.62 * gap_coarse); // first-order in dt
}

TEST_CASE("implicit diffusion never grows the max norm") {
    auto [space, time] = build_grids(1.0, 14, 10.0, 5); // dt far beyond the explicit limit
    auto pde = PDESpec::heat(1.0, BoundarySpec::dirichlet(0.0));
    auto ic_spline = sample_random_ic(23, 14, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    auto field = solve(pde, SchemeId::Btcs, resample_interior(ic_spline, ic_spline.n_x), space, time);
    auto norm = [&](std::size_t j) {
        double m = 0.0;
        for (std::size_t i = 0; i < 14; ++i) m = std::max(m, std::abs(field.values(i, j)));
        return m;
    };
    for (std::size_t j = 1; j <= 5; ++j) CHECK(norm(j) <= norm(j - 1) + 1e-14);
}

TEST_CASE("IMEX stays bounded where FTCS blows up") {
    auto [space, time] = build_grids(1.0, 30, 0.5, 10);
    auto pde = PDESpec::allen_cahn(0.05); // eps2 dt/dx^2 ~ 0.6
    CHECK(stability_ratio(pde, space.dx, time.dt) > 0.25);
    auto ic_spline = sample_random_ic(29, 30, -0.5, 0.5, BoundarySpec::dirichlet(-1.0));
    auto ic = resample_interior(ic_spline, ic_spline.n_x);
    auto field = solve(pde, SchemeId::Imex, ic, space, time);
    for (double v : field.values.data()) CHECK(std::abs(v) <= 1.5);
}

TEST_CASE("leapfrog discrete energy is bounded at CFL <= 0.5") {
    auto [space, time] = build_grids(1.0, 29, 5.0, 100);
    auto pde = PDESpec::wave(0.2, BoundarySpec::dirichlet(0.0));
    CHECK(stability_ratio(pde, space.dx, time.dt) <= 0.5);
    auto ic_spline = sample_random_ic(101, 29, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    auto field = solve(pde, SchemeId::LeapfrogWave, resample_interior(ic_spline, ic_spline.n_x), space, time);

    const double c = 0.2, dx = space.dx, dt = time.dt;
    auto energy = [&](std::size_t j) {
        // conserved leapfrog functional: kinetic part from the time
        // difference, potential part from the product of staggered gradients
        double kinetic = 0.0;
        for (std::size_t i = 0; i < space.n_x; ++i) {
            const double v = (field.values(i, j + 1) - field.values(i, j)) / dt;
            kinetic += v * v;
        }
        auto grad_sum = [&](std::size_t ja) {
            std::vector<double> full(space.n_x + 2, 0.0);
            for (std::size_t i = 0; i < space.n_x; ++i) full[i + 1] = field.values(i, ja);
            double s = 0.0;
            for (std::size_t i = 0; i + 1 < full.size(); ++i) {
                const double ga = (full[i + 1] - full[i]) / dx;
                std::vector<double> fullb(space.n_x + 2, 0.0);
                for (std::size_t ii = 0; ii < space.n_x; ++ii) fullb[ii + 1] = field.values(ii, ja + 1);
                const double gb = (fullb[i + 1] - fullb[i]) / dx;
                s += ga * gb;
            }
            return s;
        };
        return 0.5 * dx * kinetic + 0.5 * c * c * dx * grad_sum(j);
    };

    const double e0 = energy(0);
    for (std::size_t j = 0; j < 100; ++j)
        CHECK(std::abs(energy(j) - e0) <= 0.05 * std::abs(e0));
}

TEST_CASE("temporal orders sit near one") {
    CHECK_THAT(temporal_order(PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0)), SchemeId::Ftcs, 8),
               Catch::Matchers::WithinAbs(1.0, 0.2));
    CHECK_THAT(temporal_order(PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0)), SchemeId::Btcs, 8),
               Catch::Matchers::WithinAbs(1.0, 0.2));
    CHECK_THAT(temporal_order(PDESpec::allen_cahn(), SchemeId::Imex, 8),
               Catch::Matchers::WithinAbs(1.0, 0.2));
}

TEST_CASE("spatial orders sit near two") {
    auto heat = PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0));
    const double order = spatial_order(heat, SchemeId::Ftcs, 25, 0.5);
    CHECK(order >= 1.7);
    CHECK(order <= 2.3);

    auto wave = PDESpec::wave(0.2, BoundarySpec::dirichlet(0.0));
    const double worder = spatial_order(wave, SchemeId::LeapfrogWave, 25, 1.0);
    CHECK(worder >= 1.7);
    CHECK(worder <= 2.3);
}

TEST_CASE("scheme compatibility is enforced") {
    auto [space, time] = build_grids(1.0, 4, 0.5, 4);
    std::vector<double> ic(4, 0.0);
    CHECK_THROWS_AS(solve(PDESpec::wave(), SchemeId::Ftcs, ic, space, time),
                    std::invalid_argument);
    CHECK_THROWS_AS(solve(PDESpec::heat(), SchemeId::Imex, ic, space, time),
                    std::invalid_argument);
    CHECK_THROWS_AS(solve(PDESpec::heat(), SchemeId::LeapfrogWave, ic, space, time),
                    std::invalid_argument);
    CHECK_THROWS_AS(solve(PDESpec::allen_cahn(), SchemeId::Btcs, ic, space, time),
                    std::invalid_argument);
}

TEST_CASE("divergence is reported with scheme and step") {
    auto [space, time] = build_grids(1.0, 14, 40.0, 8); // r_d ~ 282, violently unstable
    auto pde = PDESpec::heat(1.0, BoundarySpec::dirichlet(0.0));
    auto ic = sample_random_ic(5, 14, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    try {
        solve(pde, SchemeId::Ftcs, resample_interior(ic, ic.n_x), space, time);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("ftcs") != std::string::npos);
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("reference at refinement one is the plain solve") {
    auto [space, time] = build_grids(1.0, 14, 0.5, 25);
    auto pde = PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0));
    auto ic = sample_random_ic(8, 14, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    auto ref = reference_solution(pde, ic, space, time, 1, 1);
    auto direct = solve(pde, SchemeId::Ftcs, resample_interior(ic, ic.n_x), space, time);
    CHECK(ref.values == direct.values);
}

TEST_CASE("refined reference matches the analytic eigenmode within 1e-4") {
    auto [space, time] = build_grids(1.0, 14, 0.5, 25);
    auto pde = PDESpec::heat(0.01, BoundarySpec::dirichlet(0.0));
    std::vector<double> knots = space.points;
    std::vector<double> values(knots.size());
    for (std::size_t i = 0; i < knots.size(); ++i)
        values[i] = std::sin(0.5 * pi * (knots[i] + 1.0));
    auto ic = ic_from_values(knots, values);

    auto ref = reference_solution(pde, ic, space, time, 8, 64);
    const double kappa = 0.5 * pi;
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < space.n_x; ++i) {
        const double exact = std::exp(-0.01 * kappa * kappa * 0.5) *
                             std::sin(kappa * (space.interior(i) + 1.0));
        worst = std::max(worst, std::abs(ref.values(i, 25) - exact));
        scale = std::max(scale, std::abs(exact));
    }
    CHECK(worst <= 1e-4 * scale);
}

TEST_CASE("reference refinement stability is checked and auto-raised") {
    auto [space, time] = build_grids(1.0, 14, 0.5, 1);
    auto pde = PDESpec::heat(1.0, BoundarySpec::dirichlet(0.0));
    auto ic = sample_random_ic(2, 14, -0.5, 0.5, BoundarySpec::dirichlet(0.0));
    CHECK_THROWS_AS(reference_solution(pde, ic, space, time, 1, 1), StabilityError);

    const std::size_t refine_t = stable_refine_t(pde, space, time, 8);
    CHECK((refine_t & (refine_t - 1)) == 0); // power of two
    CHECK_NOTHROW(reference_solution(pde, ic, space, time, 8, refine_t));

    // Allen-Cahn defaults: refine_x = 8, refine_t = 64 is comfortably stable.
    auto [space_ac, time_ac] = build_grids(1.0, 14, 0.5, 25);
    auto ac = PDESpec::allen_cahn();
    const double dx_fine = space_ac.dx / 8.0;
    const double dt_fine = time_ac.dt / 64.0;
    CHECK(stability_ratio(ac, dx_fine, dt_fine) <= 0.25);
    CHECK(stable_refine_t(ac, space_ac, time_ac, 8, 64) == 64);
}
