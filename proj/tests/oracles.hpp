#pragma once
// Test-only reference implementations. These use Boost's double-exponential
// quadrature so they share no code path with the library's Gauss-Kronrod
// evaluators or series.

#include <cmath>
#include <limits>

#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

namespace oracle {

inline double phi(double alpha, double beta, double z) {
    boost::math::quadrature::tanh_sinh<double> ts;
    auto f = [&](double t, double tc) {
        // tc is the distance to the nearer endpoint; use it for 1-t near 1.
        const double one_minus = t > 0.5 ? tc : 1.0 - t;
        return std::pow(t, alpha - 1.0) * std::pow(one_minus, beta - alpha - 1.0) * std::exp(z * t);
    };
    const double integral = ts.integrate(f, 0.0, 1.0, 1e-15);
    return std::exp(std::lgamma(beta) - std::lgamma(alpha) - std::lgamma(beta - alpha)) * integral;
}

inline double psi(double alpha, double beta, double z) {
    boost::math::quadrature::exp_sinh<double> es;
    auto f = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double lf = -z * t + (alpha - 1.0) * std::log(t) + (beta - alpha - 1.0) * std::log1p(t);
        return lf < -740.0 ? 0.0 : std::exp(lf);
    };
    return es.integrate(f, 1e-15) / std::tgamma(alpha);
}

/// int_0^x u^(nu-1) e^(-u) du
inline double lower_gamma(double nu, double x) {
    boost::math::quadrature::tanh_sinh<double> ts;
    return ts.integrate([&](double u) { return std::pow(u, nu - 1.0) * std::exp(-u); }, 0.0, x, 1e-15);
}

/// int_x^inf u^(s-1) e^(-u) du for any real s (x > 0).
inline double upper_gamma(double s, double x) {
    boost::math::quadrature::exp_sinh<double> es;
    return es.integrate([&](double u) { return std::pow(u + x, s - 1.0) * std::exp(-(u + x)); }, 1e-15);
}

/// E[(Z - b)_+^a] for Z = 1/(2 G), G ~ Gamma(nu), integrating over G.
inline double moment_z_minus_b(double nu, double a, double b) {
    boost::math::quadrature::tanh_sinh<double> ts;
    const double top = 1.0 / (2.0 * b);
    auto f = [&](double g, double gc) {
        if (g <= 0.0) return 0.0;
        const double gap = g > 0.5 * top ? gc / (2.0 * g * top) : (1.0 / (2.0 * g) - b);
        if (gap <= 0.0) return 0.0;
        const double lf = a * std::log(gap) + (nu - 1.0) * std::log(g) - g;
        return lf < -740.0 ? 0.0 : std::exp(lf);
    };
    return ts.integrate(f, 0.0, top, 1e-14) / std::tgamma(nu);
}

/// E[(b - Z)_+^a].
inline double moment_b_minus_z(double nu, double a, double b) {
    boost::math::quadrature::exp_sinh<double> es;
    const double bottom = 1.0 / (2.0 * b);
    auto f = [&](double u) {
        const double g = bottom + u;
        const double gap = u / (2.0 * g * bottom);  // b - 1/(2g)
        return std::pow(gap, a) * std::pow(g, nu - 1.0) * std::exp(-g);
    };
    return es.integrate(f, 1e-14) / std::tgamma(nu);
}

/// CDF of Z = 1/(2 Gamma_nu) written as an integral of the Gamma density.
inline double z_cdf(double nu, double x) {
    if (x <= 0.0) return 0.0;
    return 1.0 - lower_gamma(nu, 1.0 / (2.0 * x)) / std::tgamma(nu);
}

inline double noncentral_chisq_cdf(double dof, double lambda, double x) {
    boost::math::non_central_chi_squared_distribution<double> d(dof, lambda);
    return boost::math::cdf(d, x);
}

}  // namespace oracle
