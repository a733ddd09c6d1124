#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "sqrtlab/mellin.hpp"
#include "sqrtlab/sampling.hpp"

using namespace sqrtlab;

namespace {

// Frozen from high-precision evaluations of the defining integrals.
constexpr double kZMinusB_15_05_1 = 0.219595018358626705;  // E[(Z-1)_+^0.5], nu = 1.5
constexpr double kBMinusZ_07_1_2 = 0.767642430348463694;   // E[(2-Z)_+], nu = 0.7
constexpr double kBMinusZ_2_1_50 = 49.502491687458;        // E[(50-Z)_+], nu = 2
constexpr double kPlusFinite_15_2_1 = 0.3023929699139876;  // P^(-nu)(sigma_+ < inf)
constexpr double kPlusFinite_07_2_1 = 0.5506330397397121;

double p_z_below(double nu, double x) { return oracle::z_cdf(nu, x); }

struct Grid {
    double nu, b, c;
};
const std::vector<Grid> kGrid = {{0.7, 2, 1}, {0.7, 1, 2}, {1.5, 2, 1}, {1.5, 1, 2}};

MellinRun small_run(ProblemSpec spec, std::uint64_t seed) {
    MellinRun run;
    run.spec = spec;
    run.n = 100000;
    run.n_allowance = 20000;
    run.seed = seed;
    return run;
}

}  // namespace

TEST(ClosedForm, SigmaPlusPosdriftSmallExponentLimit) {
    EXPECT_NEAR(cf_sigma_plus_posdrift(1.5, 1e-12, 2, 1), 1.0, 1e-10);
    EXPECT_NEAR(cf_sigma_plus_posdrift(0.7, 1e-12, 1, 2), 1.0, 1e-10);
    EXPECT_THROW(cf_sigma_plus_posdrift(1.5, 0.0, 2, 1), DomainError);
    try {
        cf_sigma_plus_posdrift(1.5, 1.0, 2, 2);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_STREQ(e.what(), "b must differ from c");
    }
}

TEST(ClosedForm, DensityRelationRouteAgrees) {
    for (const auto& g : kGrid)
        for (double a : {0.1, 0.5, 1.0, 2.0, 3.5}) {
            const double x = cf_sigma_plus_posdrift(g.nu, a, g.b, g.c);
            const double y = sigma_plus_posdrift_via_density_relation(g.nu, a, g.b, g.c);
            EXPECT_NEAR(x, y, 1e-12 * std::abs(x)) << g.nu << ' ' << a << ' ' << g.b;
        }
}

TEST(ClosedForm, SigmaPlusNegdriftLimits) {
    for (double nu : {0.7, 1.5, 2.5}) {
        // b > c: the a -> 0 limit is the escape-complement probability.
        const double lim = cf_sigma_plus_negdrift(nu, 0.0, 2, 1);
        const double phi_form = std::pow(0.5, nu) * oracle::phi(nu, nu + 1, 0.25) / oracle::phi(nu, nu + 1, 0.5);
        EXPECT_NEAR(lim, phi_form, 1e-10);
        EXPECT_NEAR(lim, cf_prob_sigma_plus_finite(nu, 2, 1), 1e-8);
        EXPECT_NEAR(cf_sigma_plus_negdrift(nu, 1e-9, 2, 1), lim, 1e-8);
        // b < c: sigma_+ is finite almost surely.
        EXPECT_NEAR(cf_sigma_plus_negdrift(nu, 1e-12, 1, 2), 1.0, 1e-10);
    }
    EXPECT_NEAR(cf_prob_sigma_plus_finite(1.5, 2, 1), kPlusFinite_15_2_1, 1e-13);
    EXPECT_NEAR(cf_prob_sigma_plus_finite(0.7, 2, 1), kPlusFinite_07_2_1, 1e-13);
    EXPECT_THROW(cf_sigma_plus_negdrift(0.5, -0.5, 2, 1), DomainError);
}

TEST(ClosedForm, ProbSigmaPlusFinite) {
    const double p = cf_prob_sigma_plus_finite(1.5, 2, 1);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    EXPECT_THROW(cf_prob_sigma_plus_finite(1.5, 1, 2), DomainError);
    EXPECT_THROW(cf_prob_sigma_plus_finite(0.0, 2, 1), DomainError);
    const ProblemSpec spec{1.5, Drift::minus, 2, 1, Boundary::plus};
    const auto batch = collect({61, stream_tag("plus-finite")}, spec, 100000, {});
    EXPECT_LT(std::abs(stats::binomial_z(batch.summary.hits, batch.summary.n, p)), 3.0);
}

TEST(ClosedForm, SigmaMinusNegdriftAtZero) {
    for (double nu : {0.3, 0.7, 1.5, 2.5}) {
        // b > c: lower incomplete gamma ratio, against independent quadrature.
        const double want = oracle::lower_gamma(nu, 0.25) / oracle::lower_gamma(nu, 0.5);
        EXPECT_NEAR(cf_sigma_minus_negdrift(nu, 0.0, 2, 1), want, 1e-10) << nu;
        EXPECT_NEAR(prob_sigma_minus_negdrift(nu, 2, 1), want, 1e-10);
        // b < c: ratio of Z distribution functions.
        const double want2 = p_z_below(nu, 1.0) / p_z_below(nu, 2.0);
        EXPECT_NEAR(cf_sigma_minus_negdrift(nu, 0.0, 1, 2), want2, 1e-10) << nu;
        EXPECT_NEAR(prob_sigma_minus_negdrift(nu, 1, 2), want2, 1e-10);
    }
    EXPECT_THROW(cf_sigma_minus_negdrift(1.5, 1.5, 2, 1), DomainError);
    EXPECT_THROW(cf_sigma_minus_negdrift(1.5, -0.1, 2, 1), DomainError);
}

TEST(ClosedForm, SigmaMinusPosdriftIsOneAtZeroAndDecreasing) {
    for (double nu : {0.0, 0.3, 0.7, 1.5, 2.5})
        for (auto [b, c] : {std::pair{2.0, 1.0}, std::pair{1.0, 2.0}, std::pair{5.0, 0.3}, std::pair{0.4, 3.0}}) {
            const double v0 = cf_sigma_minus_posdrift(nu, 0.0, b, c);
            if (b > c) {
                EXPECT_NEAR(v0, 1.0, 1e-12) << nu << ' ' << b << ' ' << c;
            } else {
                // Above the curve at the start, the path can stay above it until the curve closes.
                EXPECT_GT(v0, 0.0);
                EXPECT_LE(v0, 1.0 + 1e-12);
            }
            double prev = v0;
            for (double a = 0.25; a <= 4.0; a += 0.25) {
                const double v = cf_sigma_minus_posdrift(nu, a, b, c);
                EXPECT_LT(v, prev);
                EXPECT_GT(v, 0.0);
                prev = v;
            }
        }
    EXPECT_THROW(cf_sigma_minus_posdrift(1.5, -0.5, 2, 1), DomainError);
}

TEST(ClosedForm, SigmaMinusPosdriftStartAboveCurveMatchesGammaRatio) {
    // P^(nu)(sigma_- < b) for b < c: the scale-function ratio, an upper
    // incomplete gamma at order -nu.
    for (double nu : {0.7, 1.5}) {
        const double want = oracle::upper_gamma(-nu, 0.5) / oracle::upper_gamma(-nu, 0.25);
        EXPECT_NEAR(cf_sigma_minus_posdrift(nu, 0.0, 1, 2), want, 1e-10) << nu;
    }
    EXPECT_NEAR(cf_sigma_minus_posdrift(0.7, 0.0, 1, 2), 0.3742493008136235, 1e-13);
    EXPECT_NEAR(cf_sigma_minus_posdrift(1.5, 0.0, 1, 2), 0.2336115358023105, 1e-13);
}

TEST(ClosedForm, MomentZMinusB) {
    for (double nu : {0.7, 1.5, 2.5})
        for (double b : {0.5, 1.0, 2.0}) {
            EXPECT_NEAR(cf_moment_z_minus_b(nu, 0.0, b), gamma_p(nu, 0.5 / b), 1e-10);
            EXPECT_NEAR(cf_moment_z_minus_b(nu, 0.0, b), 1.0 - p_z_below(nu, b), 1e-10);
            for (double a : {-0.5, 0.3 * nu, 0.6 * nu}) {
                const double want = oracle::moment_z_minus_b(nu, a, b);
                EXPECT_NEAR(cf_moment_z_minus_b(nu, a, b), want, 1e-9 * want) << nu << ' ' << a << ' ' << b;
            }
        }
    EXPECT_NEAR(cf_moment_z_minus_b(1.5, 0.5, 1), kZMinusB_15_05_1, 1e-13);
    EXPECT_GT(cf_moment_z_minus_b(1.5, 1.5 - 1e-7, 1), 1e6);
    EXPECT_THROW(cf_moment_z_minus_b(1.5, 1.5, 1), DomainError);
    EXPECT_THROW(cf_moment_z_minus_b(1.5, -1.0, 1), DomainError);
}

TEST(ClosedForm, MomentBMinusZ) {
    for (double nu : {0.7, 1.5, 2.5})
        for (double b : {0.5, 1.0, 2.0}) {
            EXPECT_NEAR(cf_moment_b_minus_z(nu, 0.0, b), p_z_below(nu, b), 1e-10);
            for (double a : {-0.5, 0.5, 1.0, 3.0}) {
                const double want = oracle::moment_b_minus_z(nu, a, b);
                EXPECT_NEAR(cf_moment_b_minus_z(nu, a, b), want, 1e-9 * want) << nu << ' ' << a << ' ' << b;
            }
        }
    EXPECT_NEAR(cf_moment_b_minus_z(0.7, 1, 2), kBMinusZ_07_1_2, 1e-13);
    // E[Z] = 1/(2(nu-1)) for nu > 1 and the tail beyond b = 50 is negligible.
    const double big = cf_moment_b_minus_z(2.0, 1.0, 50.0);
    EXPECT_NEAR(big, 50.0 - 0.5, 1e-3 * 49.5);
    EXPECT_NEAR(big, kBMinusZ_2_1_50, 1e-10);
    EXPECT_THROW(cf_moment_b_minus_z(1.5, -1.0, 1), DomainError);
}

TEST(ClosedForm, ContinuousInExponent) {
    const double h = 1e-7;
    for (const auto& g : kGrid) {
        for (double a = 0.1; a < 3.0; a += 0.2) {
            const double f0 = cf_sigma_plus_posdrift(g.nu, a, g.b, g.c);
            EXPECT_LT(std::abs(cf_sigma_plus_posdrift(g.nu, a + h, g.b, g.c) - f0), 1e-5 * std::abs(f0));
            const double p0 = cf_sigma_plus_negdrift(g.nu, a, g.b, g.c);
            EXPECT_LT(std::abs(cf_sigma_plus_negdrift(g.nu, a + h, g.b, g.c) - p0), 1e-5 * std::abs(p0));
            const double m0 = cf_sigma_minus_posdrift(g.nu, a, g.b, g.c);
            EXPECT_LT(std::abs(cf_sigma_minus_posdrift(g.nu, a + h, g.b, g.c) - m0), 1e-5 * std::abs(m0));
            const double q0 = cf_moment_b_minus_z(g.nu, a, g.b);
            EXPECT_LT(std::abs(cf_moment_b_minus_z(g.nu, a + h, g.b) - q0), 1e-5 * std::abs(q0));
        }
        for (double a = 0.0; a < 0.95 * g.nu; a += 0.05 * g.nu) {
            const double n0 = cf_sigma_minus_negdrift(g.nu, a, g.b, g.c);
            EXPECT_LT(std::abs(cf_sigma_minus_negdrift(g.nu, a + h, g.b, g.c) - n0), 1e-5 * std::abs(n0));
            const double z0 = cf_moment_z_minus_b(g.nu, a, g.b);
            EXPECT_LT(std::abs(cf_moment_z_minus_b(g.nu, a + h, g.b) - z0), 1e-5 * std::abs(z0));
        }
    }
}

TEST(MonteCarlo, MomentGridOverSampleZ) {
    // 1e6 draws per nu; exponents stay inside the finite-variance range.
    for (double nu : {0.7, 1.5, 2.5}) {
        RngStream s(62, static_cast<std::uint64_t>(nu * 10));
        std::vector<double> z(1000000);
        for (auto& x : z) x = sample_Z(s, nu);
        for (double b : {0.5, 2.0})
            for (double a : {-0.4, 0.1, 0.3}) {
                std::vector<double> up(z.size()), down(z.size());
                for (std::size_t i = 0; i < z.size(); ++i) {
                    up[i] = z[i] > b ? std::pow(z[i] - b, a) : 0.0;
                    down[i] = z[i] < b ? std::pow(b - z[i], a) : 0.0;
                }
                const auto mu = stats::mean_stderr(up), md = stats::mean_stderr(down);
                EXPECT_LT(std::abs(mu.mean - cf_moment_z_minus_b(nu, a, b)), 3.0 * mu.se) << nu << ' ' << a << ' ' << b;
                EXPECT_LT(std::abs(md.mean - cf_moment_b_minus_z(nu, a, b)), 3.0 * md.se) << nu << ' ' << a << ' ' << b;
            }
    }
}

TEST(Empirical, TrivialCases) {
    const std::vector<double> grid{0.0, 1.0};
    std::vector<HitResult> all_hit(10, HitResult{HitStatus::hit, 0.3, 0.0});
    auto pts = empirical_mellin(all_hit, MellinTransform::one_minus_over_b, grid, 2.0);
    EXPECT_EQ(pts[0].estimate, 1.0);
    EXPECT_EQ(pts[0].se, 0.0);
    EXPECT_EQ(pts[0].n_eff, 10.0);

    std::vector<HitResult> one{{HitStatus::hit, 1.0, 0.0}};
    pts = empirical_mellin(one, MellinTransform::one_minus_over_b, grid, 2.0);
    EXPECT_DOUBLE_EQ(pts[1].estimate, 0.5);
    pts = empirical_mellin(one, MellinTransform::one_plus_over_b_neg_a, grid, 2.0);
    EXPECT_DOUBLE_EQ(pts[1].estimate, 2.0 / 3.0);

    // Misses are exact zeros; inconclusive paths are dropped.
    std::vector<HitResult> mixed{{HitStatus::hit, 1.0, 0.0},
                                 {HitStatus::never, INFINITY, 0.0},
                                 {HitStatus::censored, INFINITY, 0.0},
                                 {HitStatus::inconclusive, INFINITY, 0.0}};
    pts = empirical_mellin(mixed, MellinTransform::one_minus_over_b, grid, 2.0);
    EXPECT_DOUBLE_EQ(pts[0].estimate, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(pts[1].estimate, 0.5 / 3.0);
    EXPECT_EQ(pts[1].n_eff, 3.0);
    for (const auto& p : pts) EXPECT_GE(p.se, 0.0);

    EXPECT_THROW(empirical_mellin(std::vector<HitResult>{}, MellinTransform::one_minus_over_b, grid, 2.0), DomainError);
    EXPECT_THROW(empirical_mellin(one, MellinTransform::one_minus_over_b, std::vector<double>{-0.5}, 2.0), DomainError);
}

TEST(Compare, ZScoresAndAllowance) {
    std::vector<MellinPoint> est{{1.0, 0.52, 0.01, 100}, {2.0, 0.30, 0.01, 100}};
    auto rep = compare_mellin(est, {0.5, 0.3}, 3.0);
    EXPECT_NEAR(rep.z_scores[0], 2.0, 1e-12);
    EXPECT_TRUE(rep.pass);
    rep = compare_mellin(est, {0.48, 0.3}, 3.0);
    EXPECT_NEAR(rep.worst_z, 4.0, 1e-12);
    EXPECT_FALSE(rep.pass);
    rep = compare_mellin(est, {0.48, 0.3}, 3.0, {0.015, 0.0});
    EXPECT_TRUE(rep.pass);
    EXPECT_FALSE(rep.bias_ok);

    std::ostringstream os;
    write_comparison_csv(os, rep);
    EXPECT_EQ(os.str().substr(0, 29), "a,closed_form,estimate,stderr");
    const auto j = to_json(rep);
    EXPECT_EQ(j["verdict"], "pass");
    EXPECT_EQ(j["points"].size(), 2u);
}

TEST(Compare, SigmaMinusPosdriftBatch) {
    MellinRun run = small_run({0.7, Drift::plus, 2, 1, Boundary::minus}, 63);
    run.a_grid = {0.5, 1.0, 2.0};
    const auto rep = mellin_compare(run);
    EXPECT_TRUE(rep.pass) << to_json(rep).dump();
    EXPECT_TRUE(rep.bias_ok) << to_json(rep).dump();
    for (double z : rep.z_scores) EXPECT_LT(std::abs(z), 3.0);
}

TEST(Compare, SpecExamplePoints) {
    struct Case {
        ProblemSpec spec;
        double a;
    };
    const std::vector<Case> cases{{{1.5, Drift::plus, 2, 1, Boundary::plus}, 1.0},
                                  {{1.5, Drift::minus, 2, 1, Boundary::plus}, 0.8},
                                  {{1.5, Drift::minus, 2, 1, Boundary::minus}, 0.7},
                                  {{0.7, Drift::plus, 1, 2, Boundary::minus}, 1.0}};
    std::uint64_t seed = 64;
    for (const auto& cs : cases) {
        MellinRun run = small_run(cs.spec, seed++);
        run.a_grid = {cs.a};
        const auto rep = mellin_compare(run);
        EXPECT_TRUE(rep.pass) << to_json(rep).dump();
    }
}

TEST(Compare, PerturbedClosedFormFails) {
    const ProblemSpec spec{0.7, Drift::plus, 2, 1, Boundary::minus};
    MellinRun run = small_run(spec, 63);
    run.a_grid = {0.5, 1.0, 2.0};
    const auto exact = closed_form_for(spec);
    BatchCache cache;
    const auto good = mellin_compare(run, {}, &cache);
    const auto bad = mellin_compare(run, [&](double a) { return 1.05 * exact(a); }, &cache);
    EXPECT_TRUE(good.pass);
    EXPECT_FALSE(bad.pass);
    // The second comparison reused the cached paths.
    EXPECT_EQ(cache.size(), 2u);
    EXPECT_EQ(good.grid[0].estimate, bad.grid[0].estimate);
}
