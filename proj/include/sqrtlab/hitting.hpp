#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "processes.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "specfun.hpp"

namespace sqrtlab {

/// Drift::plus is the measure P^(nu) (BM drift +nu), Drift::minus is P^(-nu).
enum class Drift { plus, minus };
/// Boundary::minus is sigma_- (boundary sqrt((b - s)/c)), plus is sigma_+.
enum class Boundary { plus, minus };

inline const char* to_string(Drift d) { return d == Drift::plus ? "plus" : "minus"; }
inline const char* to_string(Boundary b) { return b == Boundary::plus ? "plus" : "minus"; }

/// A first-passage problem for the Bessel process started at 1.
struct ProblemSpec {
    double nu = 1.5;
    Drift drift = Drift::minus;
    double b = 2.0;
    double c = 1.0;
    Boundary boundary = Boundary::minus;

    void validate() const {
        if (!(nu >= 0.0) || !std::isfinite(nu)) throw DomainError("nu must be non-negative");
        if (!(b > 0.0) || !std::isfinite(b)) throw DomainError("b must be positive");
        if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("c must be positive");
        if (b == c) throw DomainError("b must differ from c");
    }

    double bm_drift() const { return drift == Drift::plus ? nu : -nu; }

    /// Short stable name, also used to derive stream tags.
    std::string label() const {
        return std::string("sigma_") + to_string(boundary) + "/drift_" + to_string(drift) + "/nu=" + fmt_real(nu) +
               "/b=" + fmt_real(b) + "/c=" + fmt_real(c);
    }
};

struct SimParams {
    double step = 0.01;            // base BM-clock step
    int grid_level = 0;            // effective step is step / 2^grid_level
    int refine_depth = 30;         // maximum bridge halvings inside one step
    double bracket_tol = 0.0;      // A-bracket target; 0 means 1e-6 * b
    double horizon = 200.0;        // BM-clock safeguard
    double escape_tol = 1e-7;      // escape once the exact return probability is below this
    double skip_prob = 1e-10;      // bridge crossing probabilities below this are ignored
    double sigma_cap = std::numeric_limits<double>::infinity();  // sigma beyond this reported as censored

    void validate() const {
        if (!(step > 0.0)) throw DomainError("step must be positive");
        if (grid_level < 0 || grid_level > 20) throw DomainError("grid_level must be in [0, 20]");
        if (refine_depth < 0 || refine_depth > 60) throw DomainError("refine_depth must be in [0, 60]");
        if (!(bracket_tol >= 0.0)) throw DomainError("bracket_tol must be non-negative");
        if (!(horizon > 0.0)) throw DomainError("horizon must be positive");
        if (!(escape_tol > 0.0 && escape_tol < 1.0)) throw DomainError("escape_tol must be in (0, 1)");
        if (!(skip_prob >= 0.0 && skip_prob < 1.0)) throw DomainError("skip_prob must be in [0, 1)");
        if (!(sigma_cap > 0.0)) throw DomainError("sigma_cap must be positive");
    }
};

/// hit: sigma = time. never: the boundary is provably not reached (sigma_-
/// with A reaching b, or escape to infinity). censored: sigma_+ is infinite
/// (escape under drift -nu) or beyond the numerical safeguards.
/// inconclusive: the BM horizon ran out where no censoring rule applies.
enum class HitStatus { hit, never, censored, inconclusive };

inline const char* to_string(HitStatus s) {
    switch (s) {
        case HitStatus::hit: return "hit";
        case HitStatus::never: return "never";
        case HitStatus::censored: return "censored";
        default: return "inconclusive";
    }
}

struct HitResult {
    HitStatus status = HitStatus::inconclusive;
    double time = 0.0;           // sigma for hits, the Bessel clock A at the stop otherwise
    double bracket_width = 0.0;  // width of the final A-bracket for hits

    bool is_hit() const { return status == HitStatus::hit; }
};

/// Probability that eta, started at y > c, ever comes back to c under drift
/// -nu. This is the scale-function ratio of the auxiliary diffusion.
inline double eta_return_probability(const ProblemSpec& spec, double y) {
    spec.validate();
    if (spec.drift != Drift::minus) throw DomainError("eta_return_probability: defined for drift minus");
    if (!(y > spec.c)) throw DomainError("eta_return_probability: requires y > c");
    if (spec.nu == 0.0) return 1.0;
    const double nu = spec.nu, zy = 0.5 / y, zc = 0.5 / spec.c;
    if (spec.boundary == Boundary::minus) return gamma_p(nu, zy) / gamma_p(nu, zc);
    return std::pow(spec.c / y, nu) * kummer_phi({nu, nu + 1.0, zy}) / kummer_phi({nu, nu + 1.0, zc});
}

/// Precomputed per-problem constants for hit_time.
struct HitPlan {
    bool escape = false;            // escape to infinity is possible and detected
    double escape_distance = 0.0;   // in log(eta / c)
};

inline HitPlan make_hit_plan(const ProblemSpec& spec, const SimParams& sim) {
    spec.validate();
    sim.validate();
    HitPlan plan;
    if (spec.drift == Drift::plus || spec.nu == 0.0 || spec.b < spec.c) return plan;
    // Solve eta_return_probability(c e^d) = escape_tol for d by bisection.
    auto p = [&](double d) { return eta_return_probability(spec, spec.c * std::exp(d)); };
    double lo = 0.0, hi = 1.0;
    while (p(hi) > sim.escape_tol) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e5) throw NumericError("make_hit_plan: escape level not found", hi);
    }
    for (int it = 0; it < 100 && hi - lo > 1e-10 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (p(mid) > sim.escape_tol ? lo : hi) = mid;
    }
    plan.escape = true;
    plan.escape_distance = hi;
    return plan;
}

namespace detail {

struct Crossing {
    bool hit = false;
    double sigma = 0.0;
    double width = 0.0;
    double a_end = 0.0;  // refined A at the end of the searched interval
};

/// Level-crossing search for d = log(eta / c) over one BM step. d has
/// diffusion coefficient 2, so a Brownian bridge between same-side endpoints
/// d0, d1 touches 0 with probability exp(-d0 d1 / (2h)).
class CrossingSearch {
public:
    CrossingSearch(const ProblemSpec& spec, const SimParams& sim, BmWalker& walk)
        : b_(spec.b), sign_(spec.boundary == Boundary::minus ? -1.0 : 1.0), log_c_(std::log(spec.c)),
          tol_(sim.bracket_tol > 0.0 ? sim.bracket_tol : 1e-6 * spec.b), skip_(sim.skip_prob),
          max_depth_(sim.refine_depth), walk_(walk) {}

    double dist(double bv, double av) const {
        const double r = b_ + sign_ * av;
        if (r <= 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(r) - 2.0 * bv - log_c_;
    }

    Crossing search(double b0, double a0, double d0, double b1, double a1, double h, int depth) {
        const double d1 = dist(b1, a1);
        const bool bracket = d1 == 0.0 || ((d0 > 0.0) != (d1 > 0.0));
        double p = 1.0;
        if (!bracket) {
            p = std::isfinite(d1) ? std::exp(-d0 * d1 / (2.0 * h)) : 0.0;
            if (p < skip_) return {false, 0.0, 0.0, a1};
        }
        if (depth >= max_depth_ || a1 - a0 <= tol_) {
            if (bracket || walk_.aux().uniform() < p) {
                double sigma = 0.5 * (a0 + a1);
                if (sign_ < 0.0) sigma = std::min(sigma, std::nextafter(b_, 0.0));
                return {true, sigma, a1 - a0, a1};
            }
            return {false, 0.0, 0.0, a1};
        }
        const double bm = 0.5 * (b0 + b1) + std::sqrt(h / 4.0) * walk_.aux().normal();
        const double e0 = std::exp(2.0 * b0), em = std::exp(2.0 * bm), e1 = std::exp(2.0 * b1);
        const double am = a0 + 0.25 * h * (e0 + em);
        const double right_inc = 0.25 * h * (em + e1);
        const auto left = search(b0, a0, d0, bm, am, 0.5 * h, depth + 1);
        if (left.hit) return left;
        const double am2 = left.a_end;
        return search(bm, am2, dist(bm, am2), b1, am2 + right_inc, 0.5 * h, depth + 1);
    }

private:
    double b_, sign_, log_c_, tol_, skip_;
    int max_depth_;
    BmWalker& walk_;
};

}  // namespace detail

/// First passage of the Bessel process started at 1 to sqrt((b -+ s)/c),
/// computed in the BM picture: eta_t = e^(-2B_t)(b -+ A_t) crosses the
/// constant level c at tau, and sigma = A_tau.
inline HitResult hit_time(const RngStream& stream, const ProblemSpec& spec, const SimParams& sim,
                          const HitPlan& plan) {
    BmWalker walk(stream, spec.bm_drift(), sim.step, sim.grid_level);
    detail::CrossingSearch search(spec, sim, walk);
    const bool minus = spec.boundary == Boundary::minus;
    double a = 0.0, d = search.dist(0.0, 0.0);
    for (;;) {
        const double b0 = walk.b(), b1 = walk.next();
        const double a1 = a + walk.trapezoid(b0, b1);
        const auto cr = search.search(b0, a, d, b1, a1, walk.step(), 0);
        if (cr.hit) {
            if (cr.sigma > sim.sigma_cap) return {HitStatus::censored, sim.sigma_cap, 0.0};
            return {HitStatus::hit, cr.sigma, cr.width};
        }
        a = cr.a_end;
        d = search.dist(b1, a);
        if (minus && a >= spec.b) return {HitStatus::never, a, 0.0};
        if (plan.escape && d > plan.escape_distance)
            return {minus ? HitStatus::never : HitStatus::censored, a, 0.0};
        if (a > sim.sigma_cap) return {HitStatus::censored, a, 0.0};
        if (walk.time() >= sim.horizon || 2.0 * b1 > 650.0) {
            const bool safeguard = !minus && spec.drift == Drift::plus;
            return {safeguard ? HitStatus::censored : HitStatus::inconclusive, a, 0.0};
        }
    }
}

inline HitResult hit_time(const RngStream& stream, const ProblemSpec& spec, const SimParams& sim) {
    return hit_time(stream, spec, sim, make_hit_plan(spec, sim));
}

struct DirectParams {
    double step = 1e-3;     // Bessel-clock step
    double horizon = 10.0;  // Bessel-clock cap for sigma_+
};

/// Oracle simulator: R^2 as a squared Bessel process with exact transitions,
/// checked against the curved boundary (b -+ s)/c step by step. Under drift
/// -nu with dimension in (0, 2) the process is absorbed at 0.
inline HitResult hit_time_direct(RngStream& stream, const ProblemSpec& spec, const DirectParams& dp = {}) {
    spec.validate();
    if (!(dp.step > 0.0) || !(dp.horizon > 0.0)) throw DomainError("hit_time_direct: step and horizon must be positive");
    const double delta = spec.drift == Drift::plus ? 2.0 * (1.0 + spec.nu) : 2.0 * (1.0 - spec.nu);
    if (!(delta > 0.0))
        throw UnsupportedConfiguration("hit_time_direct: squared Bessel dimension " + fmt_real(delta) +
                                       " is not positive");
    const bool minus = spec.boundary == Boundary::minus;
    const bool absorbing = spec.drift == Drift::minus && spec.nu > 0.0 && delta < 2.0;
    auto g = [&](double s) { return (minus ? spec.b - s : spec.b + s) / spec.c; };
    const double end = minus ? spec.b : dp.horizon;
    double x = 1.0, s = 0.0;
    while (s < end) {
        const double h = std::min(dp.step, end - s);
        const double y = h * sample_noncentral_chisq(stream, delta, x / h);
        const double gap0 = x - g(s), gap1 = y - g(s + h);
        if (absorbing && stream.uniform() < besq_zero_visit_probability(spec.nu, x, y, h)) {
            // Reaching 0 from above the boundary forces a crossing first.
            if (gap0 > 0.0) return {HitStatus::hit, s + 0.5 * h, h};
            return {minus ? HitStatus::never : HitStatus::censored, s, 0.0};
        }
        if (gap1 == 0.0 || (gap0 > 0.0) != (gap1 > 0.0)) return {HitStatus::hit, s + h * gap0 / (gap0 - gap1), h};
        // Local Brownian approximation with variance 4 X h.
        const double p = std::exp(-gap0 * gap1 / ((x + y) * h));
        if (stream.uniform() < p) return {HitStatus::hit, s + 0.5 * h, h};
        s += h;
        x = y;
    }
    return {minus ? HitStatus::never : HitStatus::censored, end, 0.0};
}

struct HitSummary {
    std::size_t n = 0;
    std::size_t hits = 0;
    std::size_t nevers = 0;
    std::size_t censored = 0;
    std::size_t inconclusive = 0;
    double hit_fraction = 0.0;
    double censored_fraction = 0.0;
    double mean_bracket_width = 0.0;
};

inline HitSummary summarize(const std::vector<HitResult>& rs) {
    HitSummary s;
    s.n = rs.size();
    double width = 0.0;
    for (const auto& r : rs) {
        switch (r.status) {
            case HitStatus::hit:
                ++s.hits;
                width += r.bracket_width;
                break;
            case HitStatus::never: ++s.nevers; break;
            case HitStatus::censored: ++s.censored; break;
            case HitStatus::inconclusive: ++s.inconclusive; break;
        }
    }
    if (s.n > 0) {
        s.hit_fraction = static_cast<double>(s.hits) / s.n;
        s.censored_fraction = static_cast<double>(s.censored) / s.n;
    }
    if (s.hits > 0) s.mean_bracket_width = width / s.hits;
    return s;
}

struct HitBatch {
    ProblemSpec spec;
    SimParams sim;
    std::vector<HitResult> results;
    HitSummary summary;
};

/// Largest tolerated share of inconclusive paths.
inline constexpr double kMaxInconclusiveFraction = 1e-3;

/// n_paths independent hitting times; path i uses layout.path(i).
inline HitBatch collect(const StreamLayout& layout, const ProblemSpec& spec, std::size_t n_paths,
                        const SimParams& sim, unsigned workers = 1) {
    if (n_paths < 1) throw DomainError("collect: n_paths must be at least 1");
    const auto plan = make_hit_plan(spec, sim);
    HitBatch batch{spec, sim, std::vector<HitResult>(n_paths), {}};
    parallel_for(n_paths, workers, [&](std::size_t i) { batch.results[i] = hit_time(layout.path(i), spec, sim, plan); });
    batch.summary = summarize(batch.results);
    if (static_cast<double>(batch.summary.inconclusive) > kMaxInconclusiveFraction * static_cast<double>(n_paths))
        throw InconclusiveError("collect: " + std::to_string(batch.summary.inconclusive) + " of " +
                                std::to_string(n_paths) + " paths inconclusive for " + spec.label());
    return batch;
}

/// Path layout for a problem. Each label gets its own tag, so two different
/// problems never share Brownian paths while every consumer of one problem
/// sees the same batch.
inline StreamLayout hit_layout(std::uint64_t seed, const ProblemSpec& spec, const std::string& salt = "") {
    return {seed, stream_tag("hit/" + spec.label() + salt)};
}

inline void write_hits_csv(std::ostream& os, const std::vector<HitResult>& rs) {
    os << "path_id,status,time,bracket_width\n";
    for (std::size_t i = 0; i < rs.size(); ++i)
        os << i << ',' << to_string(rs[i].status) << ',' << fmt_real(rs[i].time) << ','
           << fmt_real(rs[i].bracket_width) << '\n';
}

/// Memoizes batches by (layout, spec, n, grid) so that several checks can
/// share one simulation. Thread-safe; a batch is computed at most once per
/// successful attempt.
class BatchCache {
public:
    std::shared_ptr<const HitBatch> get(const StreamLayout& layout, const ProblemSpec& spec, std::size_t n,
                                        const SimParams& sim, unsigned workers) {
        const std::string key = std::to_string(layout.seed) + "/" + std::to_string(layout.tag) + "/" + spec.label() +
                                "/n=" + std::to_string(n) + "/step=" + fmt_real(sim.step) +
                                "/L=" + std::to_string(sim.grid_level) + "/tol=" + fmt_real(sim.bracket_tol) +
                                "/esc=" + fmt_real(sim.escape_tol) + "/cap=" + fmt_real(sim.sigma_cap) +
                                "/h=" + fmt_real(sim.horizon) + "/d=" + std::to_string(sim.refine_depth);
        std::shared_ptr<Entry> entry;
        {
            std::lock_guard lock(mutex_);
            auto& slot = entries_[key];
            if (!slot) slot = std::make_shared<Entry>();
            entry = slot;
        }
        std::call_once(entry->once, [&] { entry->batch = std::make_shared<HitBatch>(collect(layout, spec, n, sim, workers)); });
        return entry->batch;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

private:
    struct Entry {
        std::once_flag once;
        std::shared_ptr<const HitBatch> batch;
    };
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> entries_;
};

}  // namespace sqrtlab
