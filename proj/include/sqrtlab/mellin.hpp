#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "hitting.hpp"
#include "io.hpp"
#include "specfun.hpp"
#include "stats.hpp"

namespace sqrtlab {

struct MellinPoint {
    double a = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    double n_eff = 0.0;
};

namespace detail {

inline void check_mellin_args(double nu, double b, double c, const char* who) {
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw DomainError(std::string(who) + ": nu must be non-negative");
    if (!(b > 0.0) || !(c > 0.0)) throw DomainError(std::string(who) + ": b and c must be positive");
    if (b == c) throw DomainError("b must differ from c");
}

/// Lambda(alpha, nu+1; 1/2b) / Lambda(alpha, nu+1; 1/2c).
inline double lambda_ratio(double alpha, double nu, double b, double c) {
    const auto kind = lambda_select(b, c);
    return lambda_eval(kind, alpha, nu + 1.0, 0.5 / b) / lambda_eval(kind, alpha, nu + 1.0, 0.5 / c);
}

/// e^(-1/2b) Lambda(a+nu+1, nu+1; 1/2b) / (same at c), without the a >= 0
/// restriction. Negative a is meaningful only inside other formulas.
inline double scale_ratio_unchecked(double nu, double a, double b, double c) {
    return std::exp(0.5 / c - 0.5 / b) * lambda_ratio(a + nu + 1.0, nu, b, c);
}

}  // namespace detail

/// E^(nu)[(1 + sigma_+/b)^(-a)], a > 0.
inline double cf_sigma_plus_posdrift(double nu, double a, double b, double c) {
    detail::check_mellin_args(nu, b, c, "cf_sigma_plus_posdrift");
    if (!(a > 0.0)) throw DomainError("cf_sigma_plus_posdrift: a must be positive");
    return detail::lambda_ratio(a, nu, b, c);
}

/// E^(-nu)[(1 + sigma_+/b)^(-a)] with sigma_+ = inf contributing 0.
inline double cf_sigma_plus_negdrift(double nu, double a, double b, double c) {
    detail::check_mellin_args(nu, b, c, "cf_sigma_plus_negdrift");
    if (!(nu + a > 0.0)) throw DomainError("cf_sigma_plus_negdrift: requires nu + a > 0");
    return std::pow(c / b, nu) * detail::lambda_ratio(nu + a, nu, b, c);
}

/// E^(-nu)[((1 - sigma_-/b)_+)^a], 0 <= a < nu; at a = 0 this is P(sigma_- < b).
inline double cf_sigma_minus_negdrift(double nu, double a, double b, double c) {
    detail::check_mellin_args(nu, b, c, "cf_sigma_minus_negdrift");
    if (!(a >= 0.0 && a < nu)) throw DomainError("cf_sigma_minus_negdrift: requires 0 <= a < nu");
    return std::pow(c / b, nu) * std::exp(0.5 / c - 0.5 / b) * detail::lambda_ratio(a + 1.0, nu, b, c);
}

/// E^(nu)[((1 - sigma_-/b)_+)^a], a >= 0.
inline double cf_sigma_minus_posdrift(double nu, double a, double b, double c) {
    detail::check_mellin_args(nu, b, c, "cf_sigma_minus_posdrift");
    if (!(a >= 0.0)) throw DomainError("cf_sigma_minus_posdrift: a must be non-negative");
    return detail::scale_ratio_unchecked(nu, a, b, c);
}

/// E[(Z - b)_+^a] for Z = 1/(2 Gamma_nu), -1 < a < nu.
inline double cf_moment_z_minus_b(double nu, double a, double b) {
    if (!(nu > 0.0)) throw DomainError("cf_moment_z_minus_b: nu must be positive");
    if (!(b > 0.0)) throw DomainError("cf_moment_z_minus_b: b must be positive");
    if (!(a > -1.0 && a < nu)) throw DomainError("cf_moment_z_minus_b: requires -1 < a < nu");
    const double z = 0.5 / b;
    const double pre = std::pow(b, a - nu) / (std::pow(2.0, nu) * std::tgamma(nu)) * std::exp(-z);
    return pre * std::tgamma(a + 1.0) * std::tgamma(nu - a) / std::tgamma(nu + 1.0) *
           kummer_phi({a + 1.0, nu + 1.0, z});
}

/// E[(b - Z)_+^a], a > -1.
inline double cf_moment_b_minus_z(double nu, double a, double b) {
    if (!(nu > 0.0)) throw DomainError("cf_moment_b_minus_z: nu must be positive");
    if (!(b > 0.0)) throw DomainError("cf_moment_b_minus_z: b must be positive");
    if (!(a > -1.0)) throw DomainError("cf_moment_b_minus_z: requires a > -1");
    const double z = 0.5 / b;
    const double pre = std::pow(b, a - nu) / (std::pow(2.0, nu) * std::tgamma(nu)) * std::exp(-z);
    return pre * std::tgamma(a + 1.0) * tricomi_psi({a + 1.0, nu + 1.0, z});
}

/// P^(-nu)(sigma_+ < inf) for b > c, from the tilted-moment relation.
inline double cf_prob_sigma_plus_finite(double nu, double b, double c) {
    if (!(nu > 0.0)) throw DomainError("cf_prob_sigma_plus_finite: nu must be positive");
    if (!(b > 0.0 && c > 0.0)) throw DomainError("cf_prob_sigma_plus_finite: b and c must be positive");
    if (!(b > c)) throw DomainError("cf_prob_sigma_plus_finite: requires b > c (the probability is 1 otherwise)");
    return std::pow(c / b, nu - 1.0) * std::exp(0.5 / b - 0.5 / c) * cf_moment_z_minus_b(nu, nu - 1.0, b) /
           cf_moment_z_minus_b(nu, nu - 1.0, c);
}

/// P^(-nu)(sigma_- < b) as a ratio of scale-function integrals
/// int_b^inf y^(-nu-1) e^(-1/2y) dy / int_c^inf ..., i.e. incomplete gammas.
inline double prob_sigma_minus_negdrift(double nu, double b, double c) {
    detail::check_mellin_args(nu, b, c, "prob_sigma_minus_negdrift");
    if (!(nu > 0.0)) throw DomainError("prob_sigma_minus_negdrift: nu must be positive");
    const double zb = 0.5 / b, zc = 0.5 / c;
    // For b < c the path starts below the level, and the mass beyond b is the
    // complementary integral.
    return b > c ? gamma_p(nu, zb) / gamma_p(nu, zc) : gamma_q(nu, zb) / gamma_q(nu, zc);
}

/// E^(nu)[(1 + sigma_+/b)^(-a)] through the density relation between
/// b/(b + sigma_+) and 1 - sigma_-/b: the t^(-nu-1) factor turns it into the
/// sigma_- transform at exponent a - nu - 1 times e^(1/2b - 1/2c).
inline double sigma_plus_posdrift_via_density_relation(double nu, double a, double b, double c) {
    detail::check_mellin_args(nu, b, c, "sigma_plus_posdrift_via_density_relation");
    if (!(a > 0.0)) throw DomainError("sigma_plus_posdrift_via_density_relation: a must be positive");
    return std::exp(0.5 / b - 0.5 / c) * detail::scale_ratio_unchecked(nu, a - nu - 1.0, b, c);
}

enum class MellinTransform {
    one_minus_over_b,       // (1 - sigma/b)_+^a for sigma_-
    one_plus_over_b_neg_a,  // (1 + sigma/b)^(-a) for sigma_+
};

inline MellinTransform transform_for(Boundary bd) {
    return bd == Boundary::minus ? MellinTransform::one_minus_over_b : MellinTransform::one_plus_over_b_neg_a;
}

/// The functional whose mean the Mellin transform is, for one path. Paths
/// without a hit contribute 0 (and 0 to the a = 0 mass as well).
inline double mellin_term(const HitResult& r, MellinTransform t, double a, double b) {
    if (!r.is_hit()) return 0.0;
    if (a == 0.0) return 1.0;
    const double x = t == MellinTransform::one_minus_over_b ? std::max(0.0, 1.0 - r.time / b) : b / (b + r.time);
    return std::pow(x, a);
}

/// Plain i.i.d. mean and stderr per exponent. Inconclusive paths are dropped.
inline std::vector<MellinPoint> empirical_mellin(std::span<const HitResult> samples, MellinTransform t,
                                                 std::span<const double> a_grid, double b) {
    if (!(b > 0.0)) throw DomainError("empirical_mellin: b must be positive");
    for (double a : a_grid)
        if (!(a >= 0.0)) throw DomainError("empirical_mellin: exponents must be non-negative");
    std::vector<const HitResult*> kept;
    kept.reserve(samples.size());
    for (const auto& r : samples)
        if (r.status != HitStatus::inconclusive) kept.push_back(&r);
    if (kept.empty()) throw DomainError("empirical_mellin: empty sample");
    std::vector<MellinPoint> out;
    std::vector<double> vals(kept.size());
    for (double a : a_grid) {
        for (std::size_t i = 0; i < kept.size(); ++i) vals[i] = mellin_term(*kept[i], t, a, b);
        const auto ms = stats::mean_stderr(vals);
        out.push_back({a, ms.mean, ms.se, ms.n});
    }
    return out;
}

struct ComparisonReport {
    std::string label;
    std::vector<MellinPoint> grid;
    std::vector<double> closed_form;
    std::vector<double> z_scores;
    std::vector<double> shift;      // fine-minus-coarse grid estimate, paired paths
    std::vector<double> allowance;  // |shift| / stderr, added to z_max
    double z_max = 3.0;
    double worst_z = 0.0;
    bool bias_ok = true;  // every |shift| below one stderr
    bool pass = false;
};

/// z_i = (estimate - closed form) / stderr; pass iff every |z_i| <= z_max +
/// allowance_i. An empty shift vector means no allowance.
inline ComparisonReport compare_mellin(std::vector<MellinPoint> est, std::vector<double> closed, double z_max,
                                       std::vector<double> shift = {}) {
    if (est.size() != closed.size()) throw DomainError("compare_mellin: grid size mismatch");
    if (!shift.empty() && shift.size() != est.size()) throw DomainError("compare_mellin: shift size mismatch");
    ComparisonReport rep;
    rep.z_max = z_max;
    rep.pass = true;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double diff = est[i].estimate - closed[i];
        double z;
        if (est[i].se > 0.0)
            z = diff / est[i].se;
        else
            z = std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(closed[i])) ? 0.0 : std::copysign(INFINITY, diff);
        const double s = shift.empty() ? 0.0 : shift[i];
        const double allow = est[i].se > 0.0 ? std::abs(s) / est[i].se : 0.0;
        rep.z_scores.push_back(z);
        rep.shift.push_back(s);
        rep.allowance.push_back(allow);
        if (std::abs(s) >= est[i].se && s != 0.0) rep.bias_ok = false;
        if (!(std::abs(z) <= z_max + allow)) rep.pass = false;
        if (std::abs(z) > std::abs(rep.worst_z) || std::isnan(z)) rep.worst_z = z;
    }
    rep.grid = std::move(est);
    rep.closed_form = std::move(closed);
    return rep;
}

using ClosedForm = std::function<double(double a)>;

/// The closed-form Mellin transform matching a problem's measure and boundary.
inline ClosedForm closed_form_for(const ProblemSpec& spec) {
    const double nu = spec.nu, b = spec.b, c = spec.c;
    if (spec.boundary == Boundary::minus) {
        if (spec.drift == Drift::minus) return [=](double a) { return cf_sigma_minus_negdrift(nu, a, b, c); };
        return [=](double a) { return cf_sigma_minus_posdrift(nu, a, b, c); };
    }
    if (spec.drift == Drift::minus) return [=](double a) { return cf_sigma_plus_negdrift(nu, a, b, c); };
    return [=](double a) { return cf_sigma_plus_posdrift(nu, a, b, c); };
}

/// Default exponent grid: inside (0, nu) for sigma_- under drift -nu, where
/// the closed form is stated, and {0.5, 1, 2} otherwise.
inline std::vector<double> default_a_grid(const ProblemSpec& spec) {
    if (spec.boundary == Boundary::minus && spec.drift == Drift::minus)
        return {0.2 * spec.nu, 0.5 * spec.nu, 0.8 * spec.nu};
    return {0.5, 1.0, 2.0};
}

struct MellinRun {
    ProblemSpec spec;
    SimParams sim;
    std::size_t n = 100000;
    std::size_t n_allowance = 100000;  // paired paths rerun two grid levels finer; 0 disables
    std::uint64_t seed = 1;
    unsigned workers = 1;
    double z_max = 3.0;
    std::vector<double> a_grid;  // empty selects default_a_grid
    std::string stream_salt;
};

/// Simulates, estimates and compares against the closed form (or `cf` when
/// given). The allowance reruns the first n_allowance paths at grid level
/// L + 2 on the same Brownian paths and uses the mean paired shift.
inline ComparisonReport mellin_compare(const MellinRun& run, ClosedForm cf = {}, BatchCache* cache = nullptr) {
    run.spec.validate();
    run.sim.validate();
    const auto grid = run.a_grid.empty() ? default_a_grid(run.spec) : run.a_grid;
    if (!cf) cf = closed_form_for(run.spec);
    std::vector<double> closed;
    for (double a : grid) closed.push_back(cf(a));

    const StreamLayout layout = hit_layout(run.seed, run.spec, run.stream_salt);
    BatchCache local;
    BatchCache& bc = cache ? *cache : local;
    const auto batch = bc.get(layout, run.spec, run.n, run.sim, run.workers);
    const auto t = transform_for(run.spec.boundary);
    auto est = empirical_mellin(batch->results, t, grid, run.spec.b);

    std::vector<double> shift;
    const std::size_t m = std::min(run.n_allowance, run.n);
    if (m > 0) {
        SimParams fine = run.sim;
        fine.grid_level += 2;
        const auto fb = bc.get(layout, run.spec, m, fine, run.workers);
        for (double a : grid) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                s += mellin_term(fb->results[i], t, a, run.spec.b) - mellin_term(batch->results[i], t, a, run.spec.b);
            shift.push_back(s / static_cast<double>(m));
        }
    }
    auto rep = compare_mellin(std::move(est), std::move(closed), run.z_max, std::move(shift));
    rep.label = run.spec.label();
    return rep;
}

inline void write_comparison_csv(std::ostream& os, const ComparisonReport& r) {
    os << "a,closed_form,estimate,stderr,z\n";
    for (std::size_t i = 0; i < r.grid.size(); ++i)
        os << fmt_real(r.grid[i].a) << ',' << fmt_real(r.closed_form[i]) << ',' << fmt_real(r.grid[i].estimate) << ','
           << fmt_real(r.grid[i].se) << ',' << fmt_real(r.z_scores[i]) << '\n';
}

inline nlohmann::json to_json(const ComparisonReport& r) {
    nlohmann::json j;
    j["label"] = r.label;
    j["verdict"] = r.pass ? "pass" : "fail";
    j["worst_z"] = r.worst_z;
    j["z_max"] = r.z_max;
    j["bias_ok"] = r.bias_ok;
    for (std::size_t i = 0; i < r.grid.size(); ++i)
        j["points"].push_back({{"a", r.grid[i].a},
                               {"closed_form", r.closed_form[i]},
                               {"estimate", r.grid[i].estimate},
                               {"stderr", r.grid[i].se},
                               {"n_eff", r.grid[i].n_eff},
                               {"z", r.z_scores[i]},
                               {"shift", r.shift[i]},
                               {"allowance", r.allowance[i]}});
    return j;
}

}  // namespace sqrtlab
