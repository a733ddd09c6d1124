#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace sqrtlab {

struct WeightedSample {
    double value = 0.0;
    double weight = 0.0;
};

inline double sample_gamma(RngStream& stream, double nu) {
    if (!(nu > 0.0) || !std::isfinite(nu)) throw DomainError("sample_gamma: nu must be positive");
    // A fresh distribution object per call keeps the stream state the only
    // state, so interleaving draws of different kinds stays reproducible.
    std::gamma_distribution<double> g(nu, 1.0);
    double x;
    do {
        x = g(stream.engine());
    } while (x == 0.0);  // possible in double precision for tiny nu
    return x;
}

/// Z = 1/(2 Gamma_nu), the law of the perpetuity A_inf under drift -nu.
inline double sample_Z(RngStream& stream, double nu) { return 0.5 / sample_gamma(stream, nu); }

/// Importance weights (z - alpha)^(nu-1) on {z > alpha} turning i.i.d. Z
/// draws into a self-normalized sample of the tilted variable Z(alpha).
inline std::vector<WeightedSample> weights_Z_tilted(std::span<const double> values, double nu,
                                                    double alpha_shift) {
    if (!(nu > 0.0)) throw DomainError("weights_Z_tilted: nu must be positive");
    if (!(alpha_shift > 0.0)) throw DomainError("weights_Z_tilted: alpha_shift must be positive");
    std::vector<WeightedSample> out;
    out.reserve(values.size());
    bool any = false;
    for (double z : values) {
        double w = 0.0;
        if (z > alpha_shift) {
            w = nu == 1.0 ? 1.0 : std::pow(z - alpha_shift, nu - 1.0);
            if (!std::isfinite(w)) w = 0.0;  // z - alpha underflowed to a pole
            any = any || w > 0.0;
        }
        out.push_back({z, w});
    }
    if (!any) throw DegenerateBatchError("weights_Z_tilted: no value exceeds alpha_shift");
    return out;
}

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double effective_sample_size(std::span<const WeightedSample> xs) {
    double s = 0.0, s2 = 0.0;
    for (const auto& x : xs) {
        s += x.weight;
        s2 += x.weight * x.weight;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
}

/// Rescales weights to sum to one.
inline void normalize_weights(std::vector<WeightedSample>& xs) {
    double s = 0.0;
    for (const auto& x : xs) s += x.weight;
    if (!(s > 0.0)) throw DegenerateBatchError("normalize_weights: total weight is zero");
    for (auto& x : xs) x.weight /= s;
}

/// Noncentral chi-square as a Poisson mixture of central ones.
inline double sample_noncentral_chisq(RngStream& stream, double dof, double noncentrality) {
    if (!(dof > 0.0) || !std::isfinite(dof)) throw DomainError("sample_noncentral_chisq: dof must be positive");
    if (!(noncentrality >= 0.0) || !std::isfinite(noncentrality))
        throw DomainError("sample_noncentral_chisq: noncentrality must be non-negative");
    double k = 0.0;
    if (noncentrality > 0.0) {
        std::poisson_distribution<long long> pois(noncentrality / 2.0);
        k = static_cast<double>(pois(stream.engine()));
    }
    std::gamma_distribution<double> g((dof + 2.0 * k) / 2.0, 1.0);
    return 2.0 * g(stream.engine());
}

}  // namespace sqrtlab
