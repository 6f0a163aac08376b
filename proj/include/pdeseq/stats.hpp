#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pdeseq {

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-16;
    constexpr double tiny = 1e-300;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta_reg(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("incomplete_beta_reg: a, b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// CDF of Student's t with df degrees of freedom.
inline double student_cdf(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("student_cdf: df must be > 0");
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta_reg(0.5 * df, 0.5, x);
    return t >= 0.0 ? 1.0 - tail : tail;
}

/// Quantile of Student's t, by bisecting the incomplete-beta CDF.
/// Monotone in p; converges to the normal quantile as df grows.
inline double t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("t_quantile: p must be in (0, 1)");
    if (!(df >= 1.0)) throw std::invalid_argument("t_quantile: df must be >= 1");
    if (p == 0.5) return 0.0;

    const double q = std::max(p, 1.0 - p);
    double hi = 1.0;
    while (student_cdf(hi, df) < q) {
        hi *= 2.0;
        if (hi > 1e12) break;
    }
    double lo = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (student_cdf(mid, df) < q)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-10 * std::max(1.0, hi)) break;
    }
    const double t = 0.5 * (lo + hi);
    return p < 0.5 ? -t : t;
}

enum class Scale { Linear, Log10 };

inline const char* scale_name(Scale s) { return s == Scale::Log10 ? "log10" : "linear"; }

/// Sample mean with a symmetric 95% t-interval, either on the plain values
/// or on log10 of the mean (for error curves spanning decades, the interval
/// is symmetric in log space).
struct Aggregate {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t n = 0;
    Scale scale = Scale::Linear;
};

inline Aggregate aggregate_ci(std::span<const double> values, Scale scale) {
    const std::size_t n = values.size();
    if (n == 0) throw std::invalid_argument("aggregate_ci: no values");

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);

    if (scale == Scale::Log10)
        for (double v : values)
            if (!(v > 0.0))
                throw std::invalid_argument("aggregate_ci: log scale needs positive values");

    Aggregate out{mean, mean, mean, n, scale};
    if (n == 1) return out; // a single sample carries no interval

    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double t = t_quantile(0.975, static_cast<double>(n - 1));

    if (scale == Scale::Log10) {
        const double half = t * sd / (mean * std::sqrt(static_cast<double>(n)) * std::log(10.0));
        out.lo = std::pow(10.0, std::log10(mean) - half);
        out.hi = std::pow(10.0, std::log10(mean) + half);
    } else {
        const double half = t * sd / std::sqrt(static_cast<double>(n));
        out.lo = mean - half;
        out.hi = mean + half;
    }
    return out;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Least squares on (log10 x, log10 y); the slope is the algebraic growth
/// or decay rate read off an error curve.
inline LineFit loglog_slope(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("loglog_slope: need >= 2 matching points");
    const std::size_t n = xs.size();
    double sx = 0.0, sy = 0.0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
            throw std::invalid_argument("loglog_slope: inputs must be positive");
        lx[i] = std::log10(xs[i]);
        ly[i] = std::log10(ys[i]);
        sx += lx[i];
        sy += ly[i];
    }
    const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("loglog_slope: abscissae are all equal");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

} // namespace pdeseq
