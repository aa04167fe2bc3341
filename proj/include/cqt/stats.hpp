#pragma once

#include <cmath>
#include <limits>

namespace cqt {

inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double normal_two_sided_p(double t) { return 2.0 * normal_sf(std::abs(t)); }

namespace detail {

// regularized lower incomplete gamma P(a, x) by series expansion
inline double gamma_p_series(double a, double x) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// regularized upper incomplete gamma Q(a, x) by continued fraction
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// upper tail of the chi-square distribution with df degrees of freedom
inline double chi2_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    const double a = 0.5 * df, hx = 0.5 * x;
    if (hx < a + 1.0) return 1.0 - detail::gamma_p_series(a, hx);
    return detail::gamma_q_cf(a, hx);
}

}  // namespace cqt
