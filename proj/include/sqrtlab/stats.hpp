#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "errors.hpp"
#include "sampling.hpp"

namespace sqrtlab::stats {

struct MeanStderr {
    double mean = 0.0;
    double se = 0.0;
    double n = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
    if (xs.empty()) throw DomainError("mean_stderr: empty sample");
    const double n = static_cast<double>(xs.size());
    double m = 0.0;
    for (double x : xs) m += x;
    m /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double var = xs.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {m, std::sqrt(var / n), n};
}

/// Self-normalized weighted mean sum w x / sum w with a delta-method stderr.
inline MeanStderr weighted_mean_stderr(std::span<const WeightedSample> xs) {
    double sw = 0.0, swx = 0.0;
    for (const auto& x : xs) {
        sw += x.weight;
        swx += x.weight * x.value;
    }
    if (!(sw > 0.0)) throw DegenerateBatchError("weighted_mean_stderr: total weight is zero");
    const double m = swx / sw;
    double v = 0.0;
    for (const auto& x : xs) {
        const double r = x.weight * (x.value - m);
        v += r * r;
    }
    return {m, std::sqrt(v) / sw, effective_sample_size(xs)};
}

/// Kolmogorov's limiting tail Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
    if (lambda < 0.2) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) <= 1e-12 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// p-value for statistic d at effective size ne, with the usual small-sample
/// correction of the argument.
inline double ks_p_value(double d, double ne) {
    if (!(ne > 0.0)) return 1.0;
    const double s = std::sqrt(ne);
    return kolmogorov_q((s + 0.12 + 0.11 / s) * d);
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double n_eff = 0.0;
};

inline KsResult ks_one_sample(std::span<const double> xs, const std::function<double(double)>& cdf) {
    if (xs.empty()) throw DomainError("ks_one_sample: empty sample");
    std::vector<double> v(xs.begin(), xs.end());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = cdf(v[i]);
        d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
    }
    return {d, ks_p_value(d, n), n};
}

/// Weighted two-sample KS. Each side's empirical CDF uses normalized weights;
/// the null distribution is approximated with Kish effective sizes in place
/// of the sample sizes. Unit weights reduce this to the ordinary test.
inline KsResult ks_two_sample_weighted(std::span<const WeightedSample> xs, std::span<const WeightedSample> ys) {
    auto prep = [](std::span<const WeightedSample> s) {
        std::vector<WeightedSample> v;
        v.reserve(s.size());
        for (const auto& x : s)
            if (x.weight > 0.0) v.push_back(x);
        if (v.empty()) throw DegenerateBatchError("ks_two_sample_weighted: empty or zero-weight sample");
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
        return v;
    };
    const auto a = prep(xs), b = prep(ys);
    double wa = 0.0, wb = 0.0;
    for (const auto& x : a) wa += x.weight;
    for (const auto& x : b) wb += x.weight;

    std::size_t i = 0, j = 0;
    double fa = 0.0, fb = 0.0, d = 0.0;
    while (i < a.size() || j < b.size()) {
        double v;
        if (j == b.size() || (i < a.size() && a[i].value <= b[j].value))
            v = a[i].value;
        else
            v = b[j].value;
        // Consume ties on both sides before measuring the gap.
        while (i < a.size() && a[i].value == v) fa += a[i++].weight;
        while (j < b.size() && b[j].value == v) fb += b[j++].weight;
        d = std::max(d, std::abs(fa / wa - fb / wb));
    }
    const double na = effective_sample_size(a), nb = effective_sample_size(b);
    const double ne = na * nb / (na + nb);
    return {d, ks_p_value(d, ne), ne};
}

inline std::vector<WeightedSample> unit_weights(std::span<const double> xs) {
    std::vector<WeightedSample> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back({x, 1.0});
    return out;
}

inline KsResult ks_two_sample(std::span<const double> xs, std::span<const double> ys) {
    return ks_two_sample_weighted(unit_weights(xs), unit_weights(ys));
}

/// z-score of an observed proportion against a known probability.
inline double binomial_z(double successes, double n, double p) {
    if (!(n > 0.0)) throw DomainError("binomial_z: n must be positive");
    const double se = std::sqrt(p * (1.0 - p) / n);
    const double diff = successes / n - p;
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    return diff / se;
}

/// z-score for the difference of two independent estimates.
inline double two_sample_z(double m1, double se1, double m2, double se2) {
    const double se = std::hypot(se1, se2);
    const double diff = m1 - m2;
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    return diff / se;
}

/// Pooled two-proportion z-score.
inline double two_proportion_z(double k1, double n1, double k2, double n2) {
    const double p = (k1 + k2) / (n1 + n2);
    const double se = std::sqrt(p * (1.0 - p) * (1.0 / n1 + 1.0 / n2));
    const double diff = k1 / n1 - k2 / n2;
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
    return diff / se;
}

}  // namespace sqrtlab::stats
