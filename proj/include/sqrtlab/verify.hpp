#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "hitting.hpp"
#include "io.hpp"
#include "mellin.hpp"
#include "parallel.hpp"
#include "processes.hpp"
#include "sampling.hpp"
#include "specfun.hpp"
#include "stats.hpp"

namespace sqrtlab {

enum class Comparator { ks_two_sample, weighted_ks, ks_one_sample, mellin_grid, proportion, count };

inline const char* to_string(Comparator c) {
    switch (c) {
        case Comparator::ks_two_sample: return "KS_two_sample";
        case Comparator::weighted_ks: return "weighted_KS";
        case Comparator::ks_one_sample: return "KS_one_sample";
        case Comparator::mellin_grid: return "mellin_grid";
        case Comparator::proportion: return "proportion_z";
        case Comparator::count: return "count";
    }
    return "?";
}

struct Check {
    std::string name;
    Comparator comparator = Comparator::count;
    double statistic = 0.0;
    double p_or_z = 0.0;  // p-value for KS, z-score for mellin/proportion, the count itself otherwise
    double threshold = 0.0;
    double allowance = 0.0;
    bool bias_ok = true;
    bool pass = false;
    std::string detail;
};

struct IdentityReport {
    std::string name;
    nlohmann::json params;
    std::size_t n = 0;
    std::vector<Check> checks;
    bool skipped = false;
    std::string notice;

    bool pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

/// Harness sanity switches: each must turn a passing identity into a failing one.
enum class Degrade { none, zero_sigma, uninverted };

struct VerifyParams {
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::size_t n = 100000;
    std::size_t n_allowance = 100000;
    SimParams sim;
    double z_max = 3.0;
    double p_min = 0.01;
    double min_n_eff = 100.0;
    double rhs_scale = 1.0;          // multiplies every right-hand-side value
    double closed_form_scale = 1.0;  // multiplies every closed form in run_all
    Degrade degrade = Degrade::none;
    std::string stream_salt;  // relabels every stream; verdicts must not care
    std::size_t dufresne_n = 10000;
    std::size_t lamperti_n = 10000;
    double lamperti_s = 0.3;
};

inline nlohmann::json params_json(const ProblemSpec& s) {
    return {{"nu", s.nu}, {"drift", to_string(s.drift)}, {"b", s.b}, {"c", s.c}, {"boundary", to_string(s.boundary)}};
}

namespace detail {

enum class Norm { plain, self_normalized };

// One row per path (or draw). Plain sides average weight * f(value) over all
// rows; self-normalized sides are weighted means over rows with weight > 0.
struct Side {
    std::vector<WeightedSample> rows;
    Norm norm = Norm::plain;
    // Paired rows for the allowance: the first m paths at the base level and
    // the same paths two grid levels finer. Empty for exact samplers.
    std::vector<WeightedSample> coarse_sub, fine_sub;
};

template <class F>
stats::MeanStderr estimate(const std::vector<WeightedSample>& rows, Norm norm, F f) {
    if (norm == Norm::plain) {
        std::vector<double> v(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) v[i] = rows[i].weight > 0.0 ? rows[i].weight * f(rows[i].value) : 0.0;
        return stats::mean_stderr(v);
    }
    std::vector<WeightedSample> v;
    for (const auto& r : rows)
        if (r.weight > 0.0) v.push_back({f(r.value), r.weight});
    return stats::weighted_mean_stderr(v);
}

template <class F>
double shift(const Side& s, F f) {
    if (s.fine_sub.empty()) return 0.0;
    return estimate(s.fine_sub, s.norm, f).mean - estimate(s.coarse_sub, s.norm, f).mean;
}

class Ctx {
public:
    Ctx(const VerifyParams& vp, BatchCache* cache) : vp_(vp), cache_(cache ? cache : &local_) {}

    const VerifyParams& vp() const { return vp_; }
    BatchCache& cache() { return *cache_; }

    StreamLayout layout(const std::string& name) const { return {vp_.seed, stream_tag(name + vp_.stream_salt)}; }

    std::vector<double> draw_z(const std::string& name, double nu, std::size_t n) const {
        const auto l = layout(name);
        std::vector<double> z(n);
        parallel_for(n, vp_.workers, [&](std::size_t i) {
            auto s = l.path(i);
            z[i] = sample_Z(s, nu);
        });
        return z;
    }

    /// Rows from the problem's cached batch via row(i, result), plus the
    /// paired fine-level subset.
    template <class RowFn>
    Side hit_side(const ProblemSpec& spec, Norm norm, RowFn row, HitSummary* summary = nullptr) {
        const auto layout = hit_layout(vp_.seed, spec, vp_.stream_salt);
        const auto b = cache_->get(layout, spec, vp_.n, vp_.sim, vp_.workers);
        if (summary) *summary = b->summary;
        Side s;
        s.norm = norm;
        s.rows.resize(b->results.size());
        for (std::size_t i = 0; i < s.rows.size(); ++i) s.rows[i] = row(i, b->results[i]);
        const std::size_t m = std::min(vp_.n_allowance, vp_.n);
        if (m > 0) {
            SimParams fine = vp_.sim;
            fine.grid_level += 2;
            const auto f = cache_->get(layout, spec, m, fine, vp_.workers);
            s.coarse_sub.assign(s.rows.begin(), s.rows.begin() + static_cast<std::ptrdiff_t>(m));
            s.fine_sub.resize(m);
            for (std::size_t i = 0; i < m; ++i) s.fine_sub[i] = row(i, f->results[i]);
        }
        return s;
    }

private:
    const VerifyParams& vp_;
    BatchCache local_;
    BatchCache* cache_;
};

inline Side exact_side(std::vector<WeightedSample> rows, Norm norm) {
    Side s;
    s.rows = std::move(rows);
    s.norm = norm;
    return s;
}

/// Two-sample z on E[f(X)] with the allowance from both sides' paired shifts.
template <class F>
Check moment_check(std::string name, Comparator cmp, const Side& x, const Side& y, F f, double z_max) {
    const auto ex = estimate(x.rows, x.norm, f), ey = estimate(y.rows, y.norm, f);
    const double z = stats::two_sample_z(ex.mean, ex.se, ey.mean, ey.se);
    const double se = std::hypot(ex.se, ey.se);
    const double sh = shift(x, f) - shift(y, f);
    Check c;
    c.name = std::move(name);
    c.comparator = cmp;
    c.statistic = ex.mean - ey.mean;
    c.p_or_z = z;
    c.threshold = z_max;
    c.allowance = se > 0.0 ? std::abs(sh) / se : 0.0;
    c.bias_ok = std::abs(sh) < se || sh == 0.0;
    c.pass = std::abs(z) <= z_max + c.allowance;
    c.detail = "lhs=" + fmt_real(ex.mean) + " rhs=" + fmt_real(ey.mean) + " se=" + fmt_real(se) + " shift=" + fmt_real(sh);
    return c;
}

inline void mellin_checks(IdentityReport& rep, const Side& x, const Side& y, const std::vector<double>& grid,
                          double z_max) {
    for (double a : grid)
        rep.checks.push_back(moment_check("mellin a=" + fmt_real(a), Comparator::mellin_grid, x, y,
                                          [a](double v) { return std::pow(v, a); }, z_max));
}

template <class Pred>
Check ks_check(std::string name, const Side& x, const Side& y, double p_min, Pred keep, bool weighted) {
    std::vector<WeightedSample> a, b;
    for (const auto& r : x.rows)
        if (r.weight > 0.0 && keep(r.value)) a.push_back(r);
    for (const auto& r : y.rows)
        if (r.weight > 0.0 && keep(r.value)) b.push_back(r);
    const auto ks = stats::ks_two_sample_weighted(a, b);
    Check c;
    c.name = std::move(name);
    c.comparator = weighted ? Comparator::weighted_ks : Comparator::ks_two_sample;
    c.statistic = ks.statistic;
    c.p_or_z = ks.p_value;
    c.threshold = p_min;
    c.pass = ks.p_value > p_min;
    c.detail = "n_eff=" + fmt_real(ks.n_eff);
    return c;
}

inline Check count_check(std::string name, double count, double limit, std::string detail = {}) {
    Check c;
    c.name = std::move(name);
    c.comparator = Comparator::count;
    c.statistic = count;
    c.p_or_z = count;
    c.threshold = limit;
    c.pass = count <= limit;
    c.detail = std::move(detail);
    return c;
}

inline IdentityReport start(const char* name, const ProblemSpec& spec, std::size_t n) {
    spec.validate();
    IdentityReport rep;
    rep.name = name;
    rep.params = params_json(spec);
    rep.n = n;
    return rep;
}

inline bool any_value(double) { return true; }

}  // namespace detail

/// (Z/b - 1)_+ = (1 - sigma_-/b)_+ (Z'/c - 1)_+ for b > c, and
/// (1 - Z/b)_+ = (1 - sigma_-/b)_+ (1 - Z'/c)_+ for b < c, under drift -nu.
inline IdentityReport verify_rae_sigma_minus(const ProblemSpec& spec, const VerifyParams& vp, BatchCache* cache = nullptr) {
    if (spec.drift != Drift::minus || spec.boundary != Boundary::minus)
        throw DomainError("verify_rae_sigma_minus: requires drift minus and boundary minus");
    auto rep = detail::start("rae_sigma_minus", spec, vp.n);
    vp.sim.validate();
    detail::Ctx ctx(vp, cache);
    const double nu = spec.nu, b = spec.b, c = spec.c;
    const bool above = b > c;
    const auto zl = ctx.draw_z("rae/lhs/" + spec.label(), nu, vp.n);
    const auto zr = ctx.draw_z("rae/rhs/" + spec.label(), nu, vp.n);

    std::vector<WeightedSample> lrows(vp.n);
    for (std::size_t i = 0; i < vp.n; ++i)
        lrows[i] = {above ? std::max(0.0, zl[i] / b - 1.0) : std::max(0.0, 1.0 - zl[i] / b), 1.0};
    const auto lhs = detail::exact_side(std::move(lrows), detail::Norm::plain);
    const bool zero = vp.degrade == Degrade::zero_sigma;
    const auto rhs = ctx.hit_side(spec, detail::Norm::plain, [&](std::size_t i, const HitResult& r) {
        if (!zero && !r.is_hit()) return WeightedSample{0.0, 1.0};
        const double s = zero ? 0.0 : r.time;
        const double zf = above ? std::max(0.0, zr[i] / c - 1.0) : std::max(0.0, 1.0 - zr[i] / c);
        return WeightedSample{std::max(0.0, 1.0 - s / b) * zf * vp.rhs_scale, 1.0};
    });

    auto atom = detail::moment_check("atom at zero", Comparator::proportion, lhs, rhs,
                                     [](double v) { return v > 0.0 ? 0.0 : 1.0; }, vp.z_max);
    rep.checks.push_back(atom);
    rep.checks.push_back(detail::ks_check("KS positive parts", lhs, rhs, vp.p_min, [](double v) { return v > 0.0; }, false));
    // The unbounded b > c variable has finite variance only for a < nu/2.
    const std::vector<double> grid = above ? std::vector<double>{0.1 * nu, 0.2 * nu, 0.4 * nu}
                                           : std::vector<double>{0.2 * nu, 0.5 * nu, 0.8 * nu};
    detail::mellin_checks(rep, lhs, rhs, grid, vp.z_max);
    return rep;
}

/// 1 + Z/b = (1 + sigma_+/b)(1 + Z'/c) for b < c under drift -nu.
inline IdentityReport verify_factorization_blc(const ProblemSpec& spec, const VerifyParams& vp, BatchCache* cache = nullptr) {
    if (spec.drift != Drift::minus || spec.boundary != Boundary::plus)
        throw DomainError("verify_factorization_blc: requires drift minus and boundary plus");
    if (!(spec.b < spec.c)) throw DomainError("verify_factorization_blc: requires b < c");
    auto rep = detail::start("factorization_blc", spec, vp.n);
    vp.sim.validate();
    detail::Ctx ctx(vp, cache);
    const double b = spec.b, c = spec.c;
    const auto zl = ctx.draw_z("blc/lhs/" + spec.label(), spec.nu, vp.n);
    const auto zr = ctx.draw_z("blc/rhs/" + spec.label(), spec.nu, vp.n);
    std::vector<WeightedSample> lrows(vp.n);
    for (std::size_t i = 0; i < vp.n; ++i) lrows[i] = {1.0 + zl[i] / b, 1.0};
    const auto lhs = detail::exact_side(std::move(lrows), detail::Norm::self_normalized);
    HitSummary sum;
    const auto rhs = ctx.hit_side(
        spec, detail::Norm::self_normalized,
        [&](std::size_t i, const HitResult& r) {
            if (!r.is_hit()) return WeightedSample{0.0, 0.0};
            return WeightedSample{(1.0 + r.time / b) * (1.0 + zr[i] / c) * vp.rhs_scale, 1.0};
        },
        &sum);
    const double missing = static_cast<double>(sum.n - sum.hits);
    rep.checks.push_back(detail::count_check("censored paths", missing, 1e-3 * static_cast<double>(sum.n),
                                             "sigma_+ is finite almost surely here"));
    rep.checks.push_back(detail::ks_check("KS", lhs, rhs, vp.p_min, detail::any_value, false));
    detail::mellin_checks(rep, lhs, rhs, {-0.5, -1.0, -2.0}, vp.z_max);
    return rep;
}

/// Z(b)/b - 1 = (1 + sigma_+*/b)^(-1) (Z(c)/c - 1) for b > c under drift -nu,
/// with the tilted variables realized by importance weights and sigma_+* by
/// discarding paths that escape.
inline IdentityReport verify_factorization_bgc(const ProblemSpec& spec, const VerifyParams& vp, BatchCache* cache = nullptr) {
    if (spec.drift != Drift::minus || spec.boundary != Boundary::plus)
        throw DomainError("verify_factorization_bgc: requires drift minus and boundary plus");
    if (!(spec.b > spec.c)) throw DomainError("verify_factorization_bgc: requires b > c");
    if (!(spec.nu > 0.0)) throw DomainError("verify_factorization_bgc: requires nu > 0");
    auto rep = detail::start("factorization_bgc", spec, vp.n);
    vp.sim.validate();
    detail::Ctx ctx(vp, cache);
    const double nu = spec.nu, b = spec.b, c = spec.c;
    const auto zl = ctx.draw_z("bgc/lhs/" + spec.label(), nu, vp.n);
    const auto zr = ctx.draw_z("bgc/rhs/" + spec.label(), nu, vp.n);
    auto lrows = weights_Z_tilted(zl, nu, b);
    for (auto& r : lrows) r.value = r.value / b - 1.0;
    const auto wr = weights_Z_tilted(zr, nu, c);
    const auto lhs = detail::exact_side(std::move(lrows), detail::Norm::self_normalized);
    const auto rhs = ctx.hit_side(spec, detail::Norm::self_normalized, [&](std::size_t i, const HitResult& r) {
        if (!r.is_hit() || !(wr[i].weight > 0.0)) return WeightedSample{0.0, 0.0};
        return WeightedSample{(zr[i] / c - 1.0) / (1.0 + r.time / b) * vp.rhs_scale, wr[i].weight};
    });
    const double ne_l = effective_sample_size(lhs.rows), ne_r = effective_sample_size(rhs.rows);
    auto enough = [&](const char* name, double ne) {
        Check ch = detail::count_check(name, ne, 0.0);
        ch.threshold = vp.min_n_eff;
        ch.pass = ne >= vp.min_n_eff;
        return ch;
    };
    rep.checks.push_back(enough("n_eff lhs", ne_l));
    rep.checks.push_back(enough("n_eff rhs", ne_r));
    if (ne_l < vp.min_n_eff || ne_r < vp.min_n_eff) return rep;
    rep.checks.push_back(detail::ks_check("weighted KS", lhs, rhs, vp.p_min, detail::any_value, true));
    // Z(b) has a z^-2 tail; these exponents keep the weighted estimator's variance finite for nu < 1.6.
    detail::mellin_checks(rep, lhs, rhs, {0.1, 0.15, 0.2}, vp.z_max);
    return rep;
}

/// Under drift +nu, b/(b + sigma_+) has density t^(-nu-1) e^(1/2b - 1/2c)
/// against that of 1 - sigma_-/b. The weights go on the sigma_+ side as
/// t^(nu+1) e^(1/2c - 1/2b), which is bounded.
inline IdentityReport verify_density_relation(const ProblemSpec& spec, const VerifyParams& vp, BatchCache* cache = nullptr) {
    if (spec.drift != Drift::plus) throw DomainError("verify_density_relation: requires drift plus");
    auto rep = detail::start("density_relation", spec, vp.n);
    vp.sim.validate();
    detail::Ctx ctx(vp, cache);
    const double nu = spec.nu, b = spec.b, c = spec.c;
    ProblemSpec minus = spec, plus = spec;
    minus.boundary = Boundary::minus;
    plus.boundary = Boundary::plus;
    const auto lhs = ctx.hit_side(minus, detail::Norm::plain, [&](std::size_t, const HitResult& r) {
        return r.is_hit() ? WeightedSample{1.0 - r.time / b, 1.0} : WeightedSample{0.0, 0.0};
    });
    const double k = std::exp(0.5 / c - 0.5 / b);
    const auto rhs = ctx.hit_side(plus, detail::Norm::plain, [&](std::size_t, const HitResult& r) {
        if (!r.is_hit()) return WeightedSample{0.0, 0.0};
        const double t = b / (b + r.time);
        return WeightedSample{t * vp.rhs_scale, std::pow(t, nu + 1.0) * k};
    });
    rep.checks.push_back(detail::moment_check("mass", Comparator::proportion, lhs, rhs, [](double) { return 1.0; }, vp.z_max));
    rep.checks.push_back(detail::ks_check("weighted KS", lhs, rhs, vp.p_min, detail::any_value, true));
    detail::mellin_checks(rep, lhs, rhs, {0.5, 1.0, 2.0}, vp.z_max);
    return rep;
}

/// E^(nu)[(1 - sigma_-/b)^a] = E^(-nu)[((b - sigma_-)/c)^nu (1 - sigma_-/b)^a; hit].
inline IdentityReport verify_abs_continuity(const ProblemSpec& spec, const VerifyParams& vp, BatchCache* cache = nullptr) {
    if (spec.boundary != Boundary::minus) throw DomainError("verify_abs_continuity: requires boundary minus");
    auto rep = detail::start("abs_continuity", spec, vp.n);
    vp.sim.validate();
    detail::Ctx ctx(vp, cache);
    const double nu = spec.nu, b = spec.b, c = spec.c;
    ProblemSpec pos = spec, neg = spec;
    pos.drift = Drift::plus;
    neg.drift = Drift::minus;
    HitSummary pos_sum;
    const auto lhs = ctx.hit_side(
        pos, detail::Norm::plain,
        [&](std::size_t, const HitResult& r) {
            return r.is_hit() ? WeightedSample{1.0 - r.time / b, 1.0} : WeightedSample{0.0, 0.0};
        },
        &pos_sum);
    const auto rhs = ctx.hit_side(neg, detail::Norm::plain, [&](std::size_t, const HitResult& r) {
        if (!r.is_hit()) return WeightedSample{0.0, 0.0};
        return WeightedSample{(1.0 - r.time / b) * vp.rhs_scale, std::pow((b - r.time) / c, nu)};
    });
    if (b > c)
        rep.checks.push_back(detail::count_check("paths missing under +nu", static_cast<double>(pos_sum.n - pos_sum.hits),
                                                 0.0, "the boundary is hit almost surely"));
    rep.checks.push_back(detail::moment_check("mass", Comparator::proportion, lhs, rhs, [](double) { return 1.0; }, vp.z_max));
    rep.checks.push_back(detail::ks_check("weighted KS", lhs, rhs, vp.p_min, detail::any_value, true));
    detail::mellin_checks(rep, lhs, rhs, {0.5, 1.0, 2.0}, vp.z_max);
    return rep;
}

/// KS of converged perpetuities against the law of 1/(2 Gamma_nu).
inline IdentityReport verify_dufresne(double nu, const VerifyParams& vp) {
    if (!(nu > 0.0)) throw DomainError("verify_dufresne: nu must be positive");
    IdentityReport rep;
    rep.name = "dufresne";
    rep.params = {{"nu", nu}};
    rep.n = vp.dufresne_n;
    if (rep.n == 0) throw DomainError("verify_dufresne: n must be positive");
    const StreamLayout layout{vp.seed, stream_tag("dufresne/" + fmt_real(nu) + vp.stream_salt)};
    std::vector<double> a(rep.n);
    std::vector<char> ok(rep.n);
    parallel_for(rep.n, vp.workers, [&](std::size_t i) {
        const auto r = sample_perpetuity(layout.path(i), nu);
        a[i] = r.value;
        ok[i] = r.converged;
    });
    double missing = 0.0;
    for (char o : ok) missing += !o;
    rep.checks.push_back(detail::count_check("unconverged paths", missing, 1e-3 * static_cast<double>(rep.n)));
    const bool raw = vp.degrade == Degrade::uninverted;
    const auto ks = stats::ks_one_sample(a, [&](double x) {
        if (x <= 0.0) return 0.0;
        return raw ? gamma_p(nu, x) : gamma_q(nu, 0.5 / x);
    });
    Check c;
    c.name = raw ? "KS vs Gamma (uninverted)" : "KS vs 1/(2 Gamma)";
    c.comparator = Comparator::ks_one_sample;
    c.statistic = ks.statistic;
    c.p_or_z = ks.p_value;
    c.threshold = vp.p_min;
    c.pass = ks.p_value > vp.p_min;
    rep.checks.push_back(c);
    return rep;
}

/// exp(B) as a time-changed Bessel process, checked through BESQ of
/// dimension 2(1 - nu); skipped when that dimension is not positive.
inline IdentityReport verify_lamperti(double nu, const VerifyParams& vp) {
    IdentityReport rep;
    rep.name = "lamperti";
    rep.params = {{"nu", nu}, {"s", vp.lamperti_s}};
    rep.n = vp.lamperti_n;
    LampertiParams lp;
    lp.workers = vp.workers;
    const auto r = lamperti_check({vp.seed, stream_tag("lamperti/" + fmt_real(nu) + vp.stream_salt)}, nu, vp.lamperti_n,
                                  vp.lamperti_s, lp);
    if (r.skipped) {
        rep.skipped = true;
        rep.notice = r.notice;
        return rep;
    }
    Check ks;
    ks.name = "KS of R at s";
    ks.comparator = Comparator::ks_two_sample;
    ks.statistic = r.ks_statistic;
    ks.p_or_z = r.ks_p_value;
    ks.threshold = vp.p_min;
    ks.pass = r.ks_p_value > vp.p_min;
    rep.checks.push_back(ks);
    Check kill;
    kill.name = "killed before s";
    kill.comparator = Comparator::proportion;
    kill.statistic = r.killed_bm - r.killed_besq;
    kill.p_or_z = r.killed_z;
    kill.threshold = vp.z_max;
    kill.pass = std::abs(r.killed_z) <= vp.z_max;
    rep.checks.push_back(kill);
    rep.checks.push_back(detail::count_check("unresolved paths", static_cast<double>(r.unresolved),
                                             1e-3 * static_cast<double>(vp.lamperti_n)));
    return rep;
}

struct GridPoint {
    double nu, b, c;
};

inline const std::vector<GridPoint>& standard_grid() {
    static const std::vector<GridPoint> g{{0.7, 2, 1}, {0.7, 1, 2}, {1.5, 2, 1}, {1.5, 1, 2}};
    return g;
}

struct AggregateReport {
    std::vector<IdentityReport> identities;
    std::vector<ComparisonReport> mellin;

    bool identities_pass() const {
        for (const auto& r : identities)
            if (!r.pass()) return false;
        return true;
    }
    bool mellin_pass() const {
        for (const auto& r : mellin)
            if (!r.pass) return false;
        return true;
    }
    bool pass() const { return identities_pass() && mellin_pass(); }
};

/// The four closed-form comparisons at one grid point.
inline std::vector<ComparisonReport> mellin_suite(const GridPoint& g, const VerifyParams& vp, BatchCache& cache) {
    std::vector<ComparisonReport> out;
    for (Boundary bd : {Boundary::plus, Boundary::minus})
        for (Drift d : {Drift::minus, Drift::plus}) {
            MellinRun run;
            run.spec = {g.nu, d, g.b, g.c, bd};
            run.sim = vp.sim;
            run.n = vp.n;
            run.n_allowance = vp.n_allowance;
            run.seed = vp.seed;
            run.workers = vp.workers;
            run.z_max = vp.z_max;
            run.stream_salt = vp.stream_salt;
            const auto cf = closed_form_for(run.spec);
            const double k = vp.closed_form_scale;
            out.push_back(mellin_compare(run, [cf, k](double a) { return k * cf(a); }, &cache));
        }
    return out;
}

/// Every identity over the standard grid, the Dufresne and Lamperti checks,
/// and the closed-form Mellin comparisons. Batches are shared through
/// `cache`, so a perturbed rerun costs no new simulation.
inline AggregateReport run_all(const VerifyParams& vp, BatchCache* cache = nullptr) {
    BatchCache local;
    BatchCache& bc = cache ? *cache : local;
    AggregateReport agg;
    for (const auto& g : standard_grid()) {
        agg.identities.push_back(verify_rae_sigma_minus({g.nu, Drift::minus, g.b, g.c, Boundary::minus}, vp, &bc));
        if (g.b < g.c)
            agg.identities.push_back(verify_factorization_blc({g.nu, Drift::minus, g.b, g.c, Boundary::plus}, vp, &bc));
        else
            agg.identities.push_back(verify_factorization_bgc({g.nu, Drift::minus, g.b, g.c, Boundary::plus}, vp, &bc));
        agg.identities.push_back(verify_density_relation({g.nu, Drift::plus, g.b, g.c, Boundary::plus}, vp, &bc));
        agg.identities.push_back(verify_abs_continuity({g.nu, Drift::minus, g.b, g.c, Boundary::minus}, vp, &bc));
    }
    for (double nu : {0.7, 1.5}) agg.identities.push_back(verify_dufresne(nu, vp));
    for (double nu : {0.7, 1.5}) agg.identities.push_back(verify_lamperti(nu, vp));
    for (const auto& g : standard_grid())
        for (auto& r : mellin_suite(g, vp, bc)) agg.mellin.push_back(std::move(r));
    return agg;
}

// ---- comparator calibration ------------------------------------------------

struct CalibrationReport {
    int reps = 0;
    int ks_pass = 0;
    int weighted_ks_pass = 0;
    int mellin_pass = 0;
};

namespace detail {

inline std::vector<double> z_batch(const StreamLayout& l, std::size_t offset, double nu, std::size_t n, double scale,
                                   unsigned workers) {
    std::vector<double> z(n);
    parallel_for(n, workers, [&](std::size_t i) {
        auto s = l.path(offset + i);
        z[i] = scale * sample_Z(s, nu);
    });
    return z;
}

// One round of each comparator on two same-law batches, the second scaled
// by `scale` after any weighting (the way rhs_scale perturbs an identity).
inline std::array<bool, 3> comparator_round(const StreamLayout& l, std::size_t offset, std::size_t n, double scale,
                                            double p_min, double z_max, unsigned workers) {
    // nu = 2.5 gives Z a finite variance, so the first moment is a fair Mellin point.
    const auto x = z_batch(l, offset, 2.5, n, 1.0, workers), y = z_batch(l, offset + n, 2.5, n, scale, workers);
    const bool ks = stats::ks_two_sample(x, y).p_value > p_min;
    // Tilted Z(0.2) at nu = 1.5, as in the b > c factorization.
    const StreamLayout lw = {l.seed, l.tag ^ 0x5A5A5Au};
    auto wx = weights_Z_tilted(z_batch(lw, offset, 1.5, n, 1.0, workers), 1.5, 0.2);
    auto wy = weights_Z_tilted(z_batch(lw, offset + n, 1.5, n, 1.0, workers), 1.5, 0.2);
    for (auto& w : wy) w.value *= scale;
    const bool wks = stats::ks_two_sample_weighted(wx, wy).p_value > p_min;
    bool mel = true;
    for (double a : {0.5, 1.0}) {
        std::vector<double> px(n), py(n);
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = std::pow(x[i], a);
            py[i] = std::pow(y[i], a);
        }
        const auto mx = stats::mean_stderr(px), my = stats::mean_stderr(py);
        mel = mel && std::abs(stats::two_sample_z(mx.mean, mx.se, my.mean, my.se)) <= z_max;
    }
    return {ks, wks, mel};
}

}  // namespace detail

/// Pass counts of each comparator over `reps` pairs of same-law batches.
inline CalibrationReport calibrate_comparators(std::uint64_t seed, int reps = 100, std::size_t n = 10000,
                                               double p_min = 0.01, double z_max = 3.0, unsigned workers = 1) {
    const StreamLayout l{seed, stream_tag("calibration")};
    CalibrationReport out;
    out.reps = reps;
    for (int r = 0; r < reps; ++r) {
        const auto v = detail::comparator_round(l, 2 * n * static_cast<std::size_t>(r), n, 1.0, p_min, z_max, workers);
        out.ks_pass += v[0];
        out.weighted_ks_pass += v[1];
        out.mellin_pass += v[2];
    }
    return out;
}

struct SensitivityReport {
    double factor = 1.0;
    bool ks_detects = false;
    bool weighted_ks_detects = false;
    bool mellin_detects = false;
    bool all() const { return ks_detects && weighted_ks_detects && mellin_detects; }
};

/// Whether each comparator rejects when one batch is scaled by `factor`.
inline SensitivityReport comparator_sensitivity(std::uint64_t seed, std::size_t n = 100000, double factor = 1.05,
                                                double p_min = 0.01, double z_max = 3.0, unsigned workers = 1) {
    const StreamLayout l{seed, stream_tag("sensitivity")};
    const auto v = detail::comparator_round(l, 0, n, factor, p_min, z_max, workers);
    return {factor, !v[0], !v[1], !v[2]};
}

// ---- output ----------------------------------------------------------------

inline nlohmann::json to_json(const IdentityReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    if (r.skipped)
        rows.push_back({{"identity_name", r.name}, {"params", r.params}, {"n", r.n}, {"comparator", "none"},
                        {"statistic", nullptr}, {"p_or_z", nullptr}, {"verdict", "skipped"}, {"notice", r.notice}});
    for (const auto& c : r.checks)
        rows.push_back({{"identity_name", r.name},
                        {"check", c.name},
                        {"params", r.params},
                        {"n", r.n},
                        {"comparator", to_string(c.comparator)},
                        {"statistic", c.statistic},
                        {"p_or_z", c.p_or_z},
                        {"threshold", c.threshold},
                        {"allowance", c.allowance},
                        {"verdict", c.pass ? "pass" : "fail"}});
    return rows;
}

inline nlohmann::json to_json(const AggregateReport& agg) {
    nlohmann::json j;
    j["verdict"] = agg.pass() ? "pass" : "fail";
    j["results"] = nlohmann::json::array();
    for (const auto& r : agg.identities)
        for (auto& row : to_json(r)) j["results"].push_back(row);
    j["mellin"] = nlohmann::json::array();
    for (const auto& m : agg.mellin) j["mellin"].push_back(to_json(m));
    return j;
}

inline void write_identity_csv(std::ostream& os, const IdentityReport& r) {
    os << "identity,check,comparator,statistic,p_or_z,threshold,allowance,verdict\n";
    for (const auto& c : r.checks)
        os << r.name << ",\"" << c.name << "\"," << to_string(c.comparator) << ',' << fmt_real(c.statistic) << ','
           << fmt_real(c.p_or_z) << ',' << fmt_real(c.threshold) << ',' << fmt_real(c.allowance) << ','
           << (c.pass ? "pass" : "fail") << '\n';
}

/// Human-readable rendering of an aggregate JSON report (as produced by
/// to_json), so `report` can reprint a saved run.
inline void write_text_report(std::ostream& os, const nlohmann::json& j) {
    auto num = [](const nlohmann::json& v) { return v.is_number() ? fmt_real(v.get<double>()) : std::string("-"); };
    for (const auto& row : j.value("results", nlohmann::json::array())) {
        os << (row.value("verdict", "") == "pass" ? "PASS " : row.value("verdict", "") == "skipped" ? "SKIP " : "FAIL ")
           << row.value("identity_name", "") << ' ' << row["params"].dump() << ' ' << row.value("check", "") << ' '
           << row.value("comparator", "") << " stat=" << num(row["statistic"]) << " p_or_z=" << num(row["p_or_z"]) << '\n';
    }
    for (const auto& m : j.value("mellin", nlohmann::json::array()))
        os << (m.value("verdict", "") == "pass" ? "PASS " : "FAIL ") << "mellin " << m.value("label", "")
           << " worst_z=" << num(m["worst_z"]) << " bias_ok=" << (m.value("bias_ok", false) ? "yes" : "no") << '\n';
    os << "overall: " << j.value("verdict", "fail") << '\n';
}

}  // namespace sqrtlab
