#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "wlfm/errors.hpp"

namespace wlfm {

inline double mean_of(const std::vector<double>& xs) {
    require(!xs.empty(), errc::degenerate_input, "mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Unbiased (n-1) sample variance; 0 for a single observation.
inline double sample_variance(const std::vector<double>& xs) {
    require(!xs.empty(), errc::degenerate_input, "variance of empty sample");
    if (xs.size() == 1) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double sample_stddev(const std::vector<double>& xs) { return std::sqrt(sample_variance(xs)); }

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 1e-14;
    constexpr double tiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
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
        if (std::abs(del - 1.0) < eps) return h;
    }
    raise(errc::degenerate_input, "incomplete beta did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b), accurate to about 1e-10.
inline double incomplete_beta(double a, double b, double x) {
    require(a > 0.0 && b > 0.0, errc::degenerate_input, "beta parameters must be positive");
    require(x >= 0.0 && x <= 1.0, errc::degenerate_input, "beta argument outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of a Student-t statistic with `dof` degrees of freedom:
/// p = I_{dof/(dof+t^2)}(dof/2, 1/2).
inline double student_t_two_sided_p(double t, double dof) {
    require(dof >= 1.0, errc::degenerate_input, "need at least one degree of freedom");
    const double x = dof / (dof + t * t);
    return incomplete_beta(dof / 2.0, 0.5, x);
}

struct t_test_result {
    double t = 0.0;
    double p = 1.0;
    double mean_diff = 0.0;
    std::size_t dof = 0;
};

/// Two-sided paired t-test on differences a_i - b_i. Identical samples give
/// t = 0, p = 1; a constant nonzero difference has no within-pair variance
/// and is reported as an error rather than infinite significance.
inline t_test_result paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), errc::length_mismatch, "paired samples differ in length");
    require(a.size() >= 2, errc::degenerate_input, "need at least two pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];

    t_test_result r;
    r.mean_diff = mean_of(d);
    r.dof = a.size() - 1;
    const double sd = sample_stddev(d);
    if (sd == 0.0) {
        require(r.mean_diff == 0.0, errc::zero_variance,
                "all differences identical and nonzero; t is undefined");
        r.t = 0.0;
        r.p = 1.0;
        return r;
    }
    r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(a.size())));
    r.p = student_t_two_sided_p(r.t, static_cast<double>(r.dof));
    return r;
}

}  // namespace wlfm
