#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "quadrature.hpp"

namespace sqrtlab {

/// Largest argument accepted by the confluent hypergeometric evaluators. No
/// asymptotic expansions are implemented, so larger z is rejected rather than
/// evaluated with degraded accuracy.
inline constexpr double kMaxConfluentArgument = 100.0;

enum class ConfluentKind { Phi, Psi };

inline const char* to_string(ConfluentKind k) { return k == ConfluentKind::Phi ? "Phi" : "Psi"; }

struct EvalParams {
    double alpha = 0.0;
    double beta = 0.0;
    double z = 0.0;
    double rel_tol = 1e-12;
};

inline double gamma_fn(double x) {
    if (!(x > 0.0)) throw DomainError("gamma_fn: argument must be positive");
    return std::tgamma(x);
}

/// gamma(nu, x) = int_0^x u^(nu-1) e^(-u) du
inline double lower_incomplete_gamma(double nu, double x) {
    if (!(nu > 0.0)) throw DomainError("lower_incomplete_gamma: nu must be positive");
    if (!(x >= 0.0)) throw DomainError("lower_incomplete_gamma: x must be non-negative");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return std::tgamma(nu);
    return boost::math::tgamma_lower(nu, x);
}

/// Gamma(nu, x) = int_x^inf u^(nu-1) e^(-u) du
inline double upper_incomplete_gamma(double nu, double x) {
    if (!(nu > 0.0)) throw DomainError("upper_incomplete_gamma: nu must be positive");
    if (!(x >= 0.0)) throw DomainError("upper_incomplete_gamma: x must be non-negative");
    if (x == 0.0) return std::tgamma(nu);
    if (std::isinf(x)) return 0.0;
    return boost::math::tgamma(nu, x);
}

/// Regularized P(nu, x) = gamma(nu, x) / Gamma(nu).
inline double gamma_p(double nu, double x) {
    if (!(nu > 0.0)) throw DomainError("gamma_p: nu must be positive");
    if (!(x >= 0.0)) throw DomainError("gamma_p: x must be non-negative");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return boost::math::gamma_p(nu, x);
}

inline double gamma_q(double nu, double x) {
    if (!(nu > 0.0)) throw DomainError("gamma_q: nu must be positive");
    if (!(x >= 0.0)) throw DomainError("gamma_q: x must be non-negative");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::gamma_q(nu, x);
}

namespace detail {

inline void check_beta(double beta, const char* who) {
    if (!(beta > 0.0)) throw DomainError(std::string(who) + ": beta must be positive");
}

inline void check_z_range(double z, const char* who) {
    if (!std::isfinite(z) || std::abs(z) > kMaxConfluentArgument)
        throw DomainError(std::string(who) + ": |z| exceeds the supported range (100)");
}

/// int_0^h s^(p-1) g(s) ds. For p < 1 the substitution s = v^(1/p) removes the
/// endpoint singularity.
template <class G>
quad::Result integrate_power_weight(G&& g, double p, double h, double rel_tol) {
    if (p < 1.0) {
        auto transformed = [&](double v) { return g(std::pow(v, 1.0 / p)) / p; };
        return quad::integrate(transformed, 0.0, std::pow(h, p), rel_tol);
    }
    auto direct = [&](double s) { return std::pow(s, p - 1.0) * g(s); };
    return quad::integrate(direct, 0.0, h, rel_tol);
}

}  // namespace detail

/// Kummer's function Phi(alpha, beta; z) by its ascending series
/// sum (alpha)_k z^k / ((beta)_k k!), accumulated with Neumaier summation.
inline double kummer_phi(const EvalParams& p) {
    detail::check_beta(p.beta, "kummer_phi");
    detail::check_z_range(p.z, "kummer_phi");
    if (!std::isfinite(p.alpha)) throw DomainError("kummer_phi: alpha must be finite");
    if (p.z == 0.0) return 1.0;

    // Summing to roundoff costs a handful of extra terms; rel_tol only bounds
    // what callers may rely on.
    const double tol = std::numeric_limits<double>::epsilon() * 0.5;
    double sum = 1.0, comp = 0.0, term = 1.0;
    constexpr int kMaxTerms = 10000;
    for (int k = 0; k < kMaxTerms; ++k) {
        const double ratio = (p.alpha + k) * p.z / ((p.beta + k) * (k + 1.0));
        term *= ratio;
        const double t = sum + term;
        comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
        sum = t;
        if (term == 0.0) break;
        const double next_ratio = std::abs((p.alpha + k + 1) * p.z / ((p.beta + k + 1) * (k + 2.0)));
        if (next_ratio < 1.0) {
            const double tail = std::abs(term) * next_ratio / (1.0 - next_ratio);
            if (tail <= tol * std::abs(sum + comp)) return sum + comp;
        }
        if (k == kMaxTerms - 1)
            throw NumericError("kummer_phi: series did not converge", sum + comp);
    }
    return sum + comp;
}

/// Phi(alpha, beta; z) from its Euler integral; valid for 0 < alpha < beta.
inline double kummer_phi_integral(const EvalParams& p) {
    detail::check_beta(p.beta, "kummer_phi_integral");
    detail::check_z_range(p.z, "kummer_phi_integral");
    if (!(p.alpha > 0.0 && p.alpha < p.beta))
        throw DomainError("kummer_phi_integral: requires 0 < alpha < beta");
    const double tol = p.rel_tol * 0.1;
    const double left_pow = p.alpha, right_pow = p.beta - p.alpha;
    // Split at 1/2 so each piece carries one endpoint singularity.
    auto left = detail::integrate_power_weight(
        [&](double t) { return std::pow(1.0 - t, right_pow - 1.0) * std::exp(p.z * t); }, left_pow,
        0.5, tol);
    auto right = detail::integrate_power_weight(
        [&](double s) { return std::pow(1.0 - s, left_pow - 1.0) * std::exp(p.z * (1.0 - s)); },
        right_pow, 0.5, tol);
    const double norm = std::exp(std::lgamma(p.beta) - std::lgamma(p.alpha) - std::lgamma(p.beta - p.alpha));
    const double value = norm * (left.value + right.value);
    if (!left.converged || !right.converged)
        throw NumericError("kummer_phi_integral: quadrature did not converge", value);
    return value;
}

/// Tricomi's function Psi(alpha, beta; z) =
///   1/Gamma(alpha) int_0^inf e^(-z t) t^(alpha-1) (1+t)^(beta-alpha-1) dt.
/// The range is split at t = 1 and the tail is mapped to u in [1/2, 1) by
/// t = u / (1 - u).
inline double tricomi_psi(const EvalParams& p) {
    if (!(p.alpha > 0.0)) throw DomainError("tricomi_psi: alpha must be positive");
    if (!(p.z > 0.0)) throw DomainError("tricomi_psi: z must be positive");
    if (!std::isfinite(p.beta)) throw DomainError("tricomi_psi: beta must be finite");
    detail::check_z_range(p.z, "tricomi_psi");

    const double tol = p.rel_tol * 0.1;
    const double expo = p.beta - p.alpha - 1.0;
    auto head = detail::integrate_power_weight(
        [&](double t) { return std::exp(-p.z * t + expo * std::log1p(t)); }, p.alpha, 1.0, tol);
    auto tail = quad::integrate(
        [&](double u) {
            const double one_minus = 1.0 - u;
            const double t = u / one_minus;
            const double log_f = -p.z * t + (p.alpha - 1.0) * std::log(t) + expo * std::log1p(t) -
                                 2.0 * std::log(one_minus);
            return log_f < -745.0 ? 0.0 : std::exp(log_f);
        },
        0.5, 1.0, tol);
    const double value = (head.value + tail.value) / std::tgamma(p.alpha);
    if (!head.converged || !tail.converged)
        throw NumericError("tricomi_psi: quadrature did not converge", value);
    return value;
}

/// Psi below the diagonal (b < c), Phi above it.
inline ConfluentKind lambda_select(double b, double c) {
    if (!(b > 0.0) || !(c > 0.0)) throw DomainError("lambda_select: b and c must be positive");
    if (b == c) throw DomainError("b must differ from c");
    return b < c ? ConfluentKind::Psi : ConfluentKind::Phi;
}

inline double lambda_eval(ConfluentKind kind, double alpha, double beta, double z,
                          double rel_tol = 1e-12) {
    const EvalParams p{alpha, beta, z, rel_tol};
    return kind == ConfluentKind::Phi ? kummer_phi(p) : tricomi_psi(p);
}

}  // namespace sqrtlab
