#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "specfun.hpp"
#include "stats.hpp"

namespace sqrtlab {

/// Brownian increments larger than this are subdivided before the trapezoid
/// rule is applied to e^(2B).
inline constexpr double kLargeIncrement = 0.5;
inline constexpr std::size_t kMaxPathPoints = 20'000'000;

struct DriftedPath {
    double step = 0.0;
    std::vector<double> times;
    std::vector<double> b_values;
    std::vector<double> a_values;
};

struct BesqPath {
    double delta = 0.0;
    double x0 = 0.0;
    std::vector<double> times;
    std::vector<double> values;
};

enum class EtaSign { minus, plus };

/// Trapezoid rule for int e^(2B) over one step of length h with endpoint
/// values b0, b1. Steps with |b1 - b0| > kLargeIncrement are split at
/// Brownian-bridge midpoints first.
inline double exp2b_increment(RngStream& bridge, double b0, double b1, double h, int depth = 0) {
    if (std::abs(b1 - b0) > kLargeIncrement && depth < 30) {
        const double bm = 0.5 * (b0 + b1) + std::sqrt(h / 4.0) * bridge.normal();
        return exp2b_increment(bridge, b0, bm, h / 2.0, depth + 1) +
               exp2b_increment(bridge, bm, b1, h / 2.0, depth + 1);
    }
    return 0.5 * h * (std::exp(2.0 * b0) + std::exp(2.0 * b1));
}

/// Streaming generator of B_t = drift t + W_t on a dyadic grid.
///
/// The effective step is base_step / 2^level. Each base step draws its
/// endpoint from the main stream and fills level j midpoints from a dedicated
/// stream, so walkers at levels L and L+2 built from the same RngStream
/// follow the same Brownian path.
class BmWalker {
public:
    BmWalker(const RngStream& path, double drift, double base_step, int level = 0)
        : seed_(path.seed()), stream_id_(path.stream_id()), main_(path), drift_(drift), base_step_(base_step), level_(level) {
        if (!(base_step > 0.0)) throw DomainError("BmWalker: step must be positive");
        if (level < 0 || level > 20) throw DomainError("BmWalker: grid level must be in [0, 20]");
        h_ = std::ldexp(base_step, -level);
        const std::size_t n = std::size_t{1} << level;
        buf_.assign(n + 1, 0.0);
        pos_ = n;  // forces a refill on the first call
        for (int j = 1; j <= level; ++j) levels_.emplace_back(seed_, stream_id_, 100 + j);
    }

    double step() const { return h_; }
    double time() const { return t_; }
    double b() const { return b_; }

    /// Advances by one effective step and returns the new B.
    double next() {
        const std::size_t n = buf_.size() - 1;
        if (pos_ == n) refill();
        b_ = buf_[++pos_];
        t_ += h_;
        return b_;
    }

    /// Stream for auxiliary draws (bridge refinement, Bernoulli decisions).
    /// Created on first use; it never feeds back into the grid values.
    RngStream& aux() {
        if (!aux_) aux_.emplace(seed_, stream_id_, 2);
        return *aux_;
    }

    /// Trapezoid increment of A over the step just taken from b0.
    double trapezoid(double b0, double b1) {
        if (std::abs(b1 - b0) > kLargeIncrement) return exp2b_increment(aux(), b0, b1, h_);
        return 0.5 * h_ * (std::exp(2.0 * b0) + std::exp(2.0 * b1));
    }

private:
    void refill() {
        const std::size_t n = buf_.size() - 1;
        buf_[0] = b_;
        buf_[n] = b_ + drift_ * base_step_ + std::sqrt(base_step_) * main_.normal();
        for (int j = 1; j <= level_; ++j) {
            const std::size_t stride = n >> j;
            const double sd = std::sqrt(static_cast<double>(stride) * h_ / 2.0);
            for (std::size_t k = stride; k < n; k += 2 * stride)
                buf_[k] = 0.5 * (buf_[k - stride] + buf_[k + stride]) + sd * levels_[j - 1].normal();
        }
        pos_ = 0;
    }

    std::uint64_t seed_, stream_id_;
    RngStream main_;
    std::vector<RngStream> levels_;
    std::optional<RngStream> aux_;
    double drift_, base_step_, h_ = 0.0;
    int level_;
    std::vector<double> buf_;
    std::size_t pos_ = 0;
    double b_ = 0.0, t_ = 0.0;
};

inline DriftedPath simulate_bm_drift(const RngStream& stream, double drift, double step, double horizon,
                                     int level = 0) {
    if (!(step > 0.0)) throw DomainError("simulate_bm_drift: step must be positive");
    if (!(horizon > 0.0)) throw DomainError("simulate_bm_drift: horizon must be positive");
    if (!std::isfinite(drift)) throw DomainError("simulate_bm_drift: drift must be finite");
    BmWalker walk(stream, drift, step, level);
    const double n_steps = std::ceil(horizon / walk.step() - 1e-9);
    if (n_steps + 1 > static_cast<double>(kMaxPathPoints))
        throw ResourceError("simulate_bm_drift: grid exceeds the in-memory budget; use BmWalker to stream");
    const auto n = static_cast<std::size_t>(n_steps);
    DriftedPath p;
    p.step = walk.step();
    p.times.reserve(n + 1);
    p.b_values.reserve(n + 1);
    p.a_values.reserve(n + 1);
    p.times.push_back(0.0);
    p.b_values.push_back(0.0);
    p.a_values.push_back(0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        const double b0 = walk.b(), b1 = walk.next();
        p.times.push_back(static_cast<double>(k) * walk.step());
        p.b_values.push_back(b1);
        p.a_values.push_back(p.a_values.back() + walk.trapezoid(b0, b1));
    }
    return p;
}

/// eta_k = e^(-2 B_k) (b - A_k) for the minus sign, e^(-2 B_k) (b + A_k) for plus.
inline std::vector<double> eta_process(const DriftedPath& path, double b, EtaSign sign) {
    if (!(b > 0.0)) throw DomainError("eta_process: b must be positive");
    const double s = sign == EtaSign::minus ? -1.0 : 1.0;
    std::vector<double> out(path.b_values.size());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = std::exp(-2.0 * path.b_values[k]) * (b + s * path.a_values[k]);
    return out;
}

/// Debug dump with columns time,B,A,eta.
inline void write_path_csv(std::ostream& os, const DriftedPath& path, double b, EtaSign sign) {
    const auto eta = eta_process(path, b, sign);
    os << "time,B,A,eta\n";
    char line[128];
    for (std::size_t k = 0; k < eta.size(); ++k) {
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", path.times[k], path.b_values[k],
                      path.a_values[k], eta[k]);
        os << line;
    }
}

struct PerpetuityParams {
    double step = 0.01;
    double tol_tail = 1e-8;
    double max_time = 0.0;  // 0 picks 400/nu
};

struct PerpetuityResult {
    double value = 0.0;
    double time = 0.0;
    bool converged = false;
};

/// A_t under drift -nu, integrated until e^(2B_t) < tol_tail * A_t has held
/// for 5/nu consecutive time units.
inline PerpetuityResult sample_perpetuity(const RngStream& stream, double nu, const PerpetuityParams& p = {}) {
    if (!(nu > 0.0)) throw DomainError("sample_perpetuity: nu must be positive");
    const double window = 5.0 / nu;
    const double max_time = p.max_time > 0.0 ? p.max_time : 400.0 / nu;
    BmWalker walk(stream, -nu, p.step);
    double a = 0.0, quiet_since = -1.0;
    while (walk.time() < max_time) {
        const double b0 = walk.b(), b1 = walk.next();
        a += walk.trapezoid(b0, b1);
        if (std::exp(2.0 * b1) < p.tol_tail * a) {
            if (quiet_since < 0.0) quiet_since = walk.time();
            if (walk.time() - quiet_since >= window) return {a, walk.time(), true};
        } else {
            quiet_since = -1.0;
        }
    }
    return {a, walk.time(), false};
}

/// BESQ(delta) on the given grid via exact noncentral chi-square transitions:
/// X_{t+h} = h * chi2'(delta, X_t / h). Reflecting at 0 when delta < 2.
inline BesqPath simulate_besq_exact(RngStream& stream, double delta, double x0, const std::vector<double>& grid) {
    if (!(delta > 0.0)) throw DomainError("simulate_besq_exact: delta must be positive");
    if (!(x0 > 0.0)) throw DomainError("simulate_besq_exact: x0 must be positive");
    if (grid.empty() || grid.front() != 0.0) throw DomainError("simulate_besq_exact: grid must start at 0");
    BesqPath p{delta, x0, grid, {}};
    p.values.reserve(grid.size());
    p.values.push_back(x0 * x0);
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double h = grid[k] - grid[k - 1];
        if (!(h > 0.0)) throw DomainError("simulate_besq_exact: grid must be increasing");
        p.values.push_back(h * sample_noncentral_chisq(stream, delta, p.values.back() / h));
    }
    return p;
}

/// Uniform grid 0, h, 2h, ..., up to and including t_end.
inline std::vector<double> uniform_grid(double t_end, double h) {
    if (!(t_end > 0.0) || !(h > 0.0)) throw DomainError("uniform_grid: t_end and h must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(t_end / h - 1e-9));
    std::vector<double> g(n + 1);
    for (std::size_t k = 0; k <= n; ++k) g[k] = std::min(t_end, k * h);
    return g;
}

/// Probability that a squared Bessel process of dimension 2(1 - nu),
/// 0 < nu < 1, reflected at 0, visits 0 during a step of length h given the
/// endpoint values x0, x1. The bridge law gives 1 - I_nu(z) / I_{-nu}(z) with
/// z = sqrt(x0 x1) / h.
inline double besq_zero_visit_probability(double nu, double x0, double x1, double h) {
    if (!(nu >= 0.0 && nu < 1.0)) throw DomainError("besq_zero_visit_probability: requires 0 <= nu < 1");
    if (nu == 0.0) return 0.0;
    if (x0 <= 0.0 || x1 <= 0.0) return 1.0;
    const double z = std::sqrt(x0 * x1) / h;
    if (z > 300.0) return 0.0;
    const double extra = (2.0 / std::numbers::pi) * std::sin(nu * std::numbers::pi) * std::cyl_bessel_k(nu, z);
    const double i_pos = std::cyl_bessel_i(nu, z);
    return std::clamp(extra / (i_pos + extra), 0.0, 1.0);
}

struct LampertiReport {
    bool skipped = false;
    std::string notice;
    double nu = 0.0;
    double s_probe = 0.0;
    std::size_t n_paths = 0;
    double ks_statistic = 0.0;
    double ks_p_value = 1.0;
    double killed_bm = 0.0;     // fraction with A_inf below s
    double killed_besq = 0.0;   // fraction absorbed at 0 before s
    double killed_z = 0.0;
    std::size_t unresolved = 0;  // BM paths that neither reached s nor converged; excluded

    bool pass(double p_min = 0.01, double z_max = 3.0) const {
        return skipped || (ks_p_value > p_min && std::abs(killed_z) <= z_max &&
                           static_cast<double>(unresolved) <= 1e-3 * static_cast<double>(n_paths));
    }
};

struct LampertiParams {
    double bm_step = 0.005;
    double besq_step = 1e-3;
    int refine_depth = 30;
    unsigned workers = 1;
};

/// Compares e^(2B_t) at the BM time where A_t = s with X_s of a squared Bessel
/// process of dimension 2(1 - nu) started at 1 and absorbed at 0.
inline LampertiReport lamperti_check(const StreamLayout& layout, double nu, std::size_t n_paths, double s_probe,
                                     const LampertiParams& lp = {}) {
    if (!(nu >= 0.0)) throw DomainError("lamperti_check: nu must be non-negative");
    if (!(s_probe > 0.0)) throw DomainError("lamperti_check: probe time must be positive");
    if (n_paths < 2) throw DomainError("lamperti_check: need at least two paths");
    LampertiReport rep;
    rep.nu = nu;
    rep.s_probe = s_probe;
    rep.n_paths = n_paths;
    const double delta = 2.0 * (1.0 - nu);
    if (!(delta > 0.0)) {
        rep.skipped = true;
        rep.notice = "lamperti_check skipped: dimension 2(1-nu) = " + std::to_string(delta) +
                     " is not positive, so the squared Bessel side cannot be simulated directly";
        return rep;
    }

    std::vector<double> bm(n_paths), besq(n_paths);
    std::vector<char> unresolved(n_paths, 0);
    const auto bm_layout = layout.with_tag("lamperti-bm");
    const auto besq_layout = layout.with_tag("lamperti-besq");
    // Without drift the return time to the A-level is heavy tailed.
    const double max_time = nu > 0 ? 400.0 + 400.0 / nu : 1e4;

    parallel_for(n_paths, lp.workers, [&](std::size_t i) {
        BmWalker walk(bm_layout.path(i), -nu, lp.bm_step);
        double a = 0.0, quiet_since = -1.0;
        for (;;) {
            const double b0 = walk.b(), b1 = walk.next();
            const double inc = walk.trapezoid(b0, b1);
            if (a + inc >= s_probe) {
                // Bisect the step with bridge midpoints until the A-bracket is tight.
                double lo_b = b0, hi_b = b1, h = walk.step(), a_lo = a;
                for (int d = 0; d < lp.refine_depth; ++d) {
                    const double bm_mid = 0.5 * (lo_b + hi_b) + std::sqrt(h / 4.0) * walk.aux().normal();
                    const double left = 0.25 * h * (std::exp(2.0 * lo_b) + std::exp(2.0 * bm_mid));
                    h /= 2.0;
                    if (a_lo + left >= s_probe) {
                        hi_b = bm_mid;
                    } else {
                        a_lo += left;
                        lo_b = bm_mid;
                    }
                }
                bm[i] = std::exp(lo_b + hi_b);  // e^(2B) at the bracket midpoint
                return;
            }
            a += inc;
            if (nu > 0.0 && std::exp(2.0 * b1) < 1e-8 * a) {
                if (quiet_since < 0.0) quiet_since = walk.time();
                if (walk.time() - quiet_since >= 5.0 / nu) {
                    bm[i] = 0.0;
                    return;
                }
            } else {
                quiet_since = -1.0;
            }
            if (walk.time() > max_time) {
                unresolved[i] = 1;
                bm[i] = 0.0;
                return;
            }
        }
    });

    const auto grid = uniform_grid(s_probe, lp.besq_step);
    parallel_for(n_paths, lp.workers, [&](std::size_t i) {
        auto stream = besq_layout.path(i);
        double x = 1.0;
        for (std::size_t k = 1; k < grid.size(); ++k) {
            const double h = grid[k] - grid[k - 1];
            const double y = h * sample_noncentral_chisq(stream, delta, x / h);
            if (nu > 0.0 && stream.uniform() < besq_zero_visit_probability(nu, x, y, h)) {
                besq[i] = 0.0;
                return;
            }
            x = y;
        }
        besq[i] = x;
    });

    std::vector<double> bm_kept;
    bm_kept.reserve(n_paths);
    double k_bm = 0, k_besq = 0;
    for (std::size_t i = 0; i < n_paths; ++i) {
        if (unresolved[i]) {
            ++rep.unresolved;
        } else {
            bm_kept.push_back(bm[i]);
            k_bm += bm[i] == 0.0;
        }
        k_besq += besq[i] == 0.0;
    }
    const double n = static_cast<double>(n_paths), n_bm = static_cast<double>(bm_kept.size());
    rep.killed_bm = k_bm / n_bm;
    rep.killed_besq = k_besq / n;
    rep.killed_z = stats::two_proportion_z(k_bm, n_bm, k_besq, n);
    // The atom at 0 is part of both laws; KS on the full samples sees it.
    const auto ks = stats::ks_two_sample(bm_kept, besq);
    rep.ks_statistic = ks.statistic;
    rep.ks_p_value = ks.p_value;
    return rep;
}

}  // namespace sqrtlab
