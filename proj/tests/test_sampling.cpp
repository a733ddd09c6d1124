#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sqrtlab/parallel.hpp"
#include "sqrtlab/sampling.hpp"
#include "sqrtlab/specfun.hpp"
#include "sqrtlab/stats.hpp"

using namespace sqrtlab;

namespace {

std::vector<double> draw(std::size_t n, RngStream s, auto&& f) {
    std::vector<double> out(n);
    for (auto& x : out) x = f(s);
    return out;
}

double variance(const std::vector<double>& xs) {
    const double m = stats::mean_stderr(xs).mean;
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / (xs.size() - 1.0);
}

/// stderr of the sample variance, from the fourth central moment.
double variance_se(const std::vector<double>& xs) {
    const double m = stats::mean_stderr(xs).mean, v = variance(xs);
    double m4 = 0.0;
    for (double x : xs) m4 += std::pow(x - m, 4);
    m4 /= xs.size();
    return std::sqrt((m4 - v * v) / xs.size());
}

/// Exact Z(alpha): u ~ Beta(1, nu) accepted with probability exp(-u/(2 alpha)),
/// then Z = alpha / u. Independent of the importance-weighting code.
double exact_tilted_z(RngStream& s, double nu, double alpha) {
    for (;;) {
        const double u = 1.0 - std::pow(s.uniform(), 1.0 / nu);
        if (u > 0.0 && s.uniform() < std::exp(-u / (2.0 * alpha))) return alpha / u;
    }
}

}  // namespace

TEST(RngStream, ReproducibleAndDistinct) {
    RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.engine()(), y = b.engine()();
        EXPECT_EQ(x, y);
        EXPECT_NE(x, c.engine()());
        EXPECT_NE(x, d.engine()());
    }
    RngStream p(1, 2);
    EXPECT_NE(p.substream(0).engine()(), p.substream(1).engine()());
    EXPECT_EQ(p.substream(3).engine()(), RngStream(1, 2).substream(3).engine()());
    EXPECT_NE(stream_tag("lhs"), stream_tag("rhs"));
    EXPECT_EQ(make_stream_id(3, 5) >> kStreamIndexBits, 3u);
}

TEST(RngStream, IndependentOfWorkerCount) {
    const StreamLayout layout{99, stream_tag("workers")};
    auto run = [&](unsigned workers) {
        std::vector<double> out(2000);
        parallel_for(out.size(), workers, [&](std::size_t i) {
            auto s = layout.path(i);
            out[i] = sample_Z(s, 0.7) + s.normal();
        });
        return out;
    };
    const auto one = run(1), four = run(4);
    EXPECT_EQ(one, four);
}

TEST(RngStream, DistinctStreamsAreUncorrelated) {
    const int n = 100000;
    RngStream a(5, 1), b(5, 2);
    double sxy = 0.0;
    for (int i = 0; i < n; ++i) sxy += a.normal() * b.normal();
    EXPECT_LT(std::abs(sxy / n), 4.0 / std::sqrt(n));
}

TEST(SampleGamma, MeanAndVariance) {
    const auto xs = draw(1000000, RngStream(1, 1), [](RngStream& s) { return sample_gamma(s, 2.0); });
    const auto ms = stats::mean_stderr(xs);
    EXPECT_LT(std::abs(ms.mean - 2.0), 3.0 * ms.se);
    EXPECT_LT(std::abs(variance(xs) - 2.0), 3.0 * variance_se(xs));
}

TEST(SampleGamma, KolmogorovSmirnovAgainstIncompleteGamma) {
    const double nu = 0.7;
    const auto xs = draw(100000, RngStream(1, 2), [&](RngStream& s) { return sample_gamma(s, nu); });
    const auto ks = stats::ks_one_sample(xs, [&](double x) { return oracle::lower_gamma(nu, x) / std::tgamma(nu); });
    EXPECT_GT(ks.p_value, 0.01) << ks.statistic;
}

TEST(SampleGamma, Errors) {
    RngStream s(1, 1);
    EXPECT_THROW(sample_gamma(s, 0.0), DomainError);
    EXPECT_THROW(sample_gamma(s, -1.0), DomainError);
    EXPECT_THROW(sample_Z(s, 0.0), DomainError);
}

TEST(SampleZ, TailMatchesIncompleteGamma) {
    const double nu = 1.5;
    const auto zs = draw(1000000, RngStream(2, 1), [&](RngStream& s) { return sample_Z(s, nu); });
    // P(Z > 2) at nu = 1.5, frozen from a high-precision evaluation.
    EXPECT_NEAR(gamma_p(nu, 0.25), 0.0811085883453241, 1e-14);
    for (double z : {0.5, 1.0, 2.0, 5.0}) {
        const double p = gamma_p(nu, 1.0 / (2.0 * z));
        EXPECT_NEAR(1.0 - oracle::z_cdf(nu, z), p, 1e-12);
        double k = 0;
        for (double x : zs) k += x > z;
        EXPECT_LT(std::abs(stats::binomial_z(k, zs.size(), p)), 3.0) << z;
    }
}

TEST(SampleZ, MeanAtNuTwo) {
    const auto zs = draw(1000000, RngStream(2, 2), [](RngStream& s) { return sample_Z(s, 2.0); });
    const auto ms = stats::mean_stderr(zs);
    EXPECT_LT(std::abs(ms.mean - 0.5), 3.0 * ms.se);
}

TEST(SampleZ, PositivePartMoment) {
    const double nu = 1.5, a = 0.5, b = 1.0;
    const double frozen = 0.219595018358626705;
    EXPECT_LT(std::abs(oracle::moment_z_minus_b(nu, a, b) / frozen - 1.0), 1e-10);
    const auto zs = draw(1000000, RngStream(2, 3), [&](RngStream& s) { return sample_Z(s, nu); });
    std::vector<double> ys;
    ys.reserve(zs.size());
    for (double z : zs) ys.push_back(z > b ? std::pow(z - b, a) : 0.0);
    const auto ms = stats::mean_stderr(ys);
    EXPECT_LT(std::abs(ms.mean - frozen), 3.0 * ms.se);
}

TEST(WeightsZTilted, NuOneIsConditioning) {
    const std::vector<double> zs{0.2, 1.5, 0.9, 3.0, 1.01};
    const auto w = weights_Z_tilted(zs, 1.0, 1.0);
    ASSERT_EQ(w.size(), zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) EXPECT_EQ(w[i].weight, zs[i] > 1.0 ? 1.0 : 0.0);
    EXPECT_DOUBLE_EQ(effective_sample_size(w), 3.0);

    // Weighted law against plain conditioning of an independent batch.
    const auto xs = draw(50000, RngStream(3, 1), [](RngStream& s) { return sample_Z(s, 1.0); });
    const auto ys = draw(50000, RngStream(3, 2), [](RngStream& s) { return sample_Z(s, 1.0); });
    std::vector<double> tail;
    for (double y : ys)
        if (y > 0.5) tail.push_back(y);
    const auto ks = stats::ks_two_sample_weighted(weights_Z_tilted(xs, 1.0, 0.5), stats::unit_weights(tail));
    EXPECT_GT(ks.p_value, 0.01);
}

TEST(WeightsZTilted, MatchesExactTiltedSampler) {
    const double nu = 1.5, c = 1.0;
    const auto xs = draw(100000, RngStream(4, 1), [&](RngStream& s) { return sample_Z(s, nu); });
    auto w = weights_Z_tilted(xs, nu, c);
    const double n_eff = effective_sample_size(w);
    EXPECT_GT(n_eff, 100.0);
    EXPECT_LE(n_eff, static_cast<double>(xs.size()));

    const auto exact = draw(20000, RngStream(4, 2), [&](RngStream& s) { return exact_tilted_z(s, nu, c); });
    EXPECT_GT(stats::ks_two_sample_weighted(w, stats::unit_weights(exact)).p_value, 0.01);

    // E[(Z(c)/c - 1)^s] = E[(Z-c)^(nu-1+s); Z>c] / (c^s E[(Z-c)^(nu-1); Z>c]).
    // The plain mean of Z(c) is infinite, so a fractional power is used.
    const double s = 0.2;
    const double want = oracle::moment_z_minus_b(nu, nu - 1.0 + s, c) /
                        (std::pow(c, s) * oracle::moment_z_minus_b(nu, nu - 1.0, c));
    EXPECT_NEAR(want, 1.24130077833085981, 1e-9);
    std::vector<WeightedSample> moments;
    for (const auto& x : w) moments.push_back({x.weight > 0 ? std::pow(x.value / c - 1.0, s) : 0.0, x.weight});
    const auto ms = stats::weighted_mean_stderr(moments);
    EXPECT_LT(std::abs(ms.mean - want), 3.0 * ms.se);
}

TEST(WeightsZTilted, Errors) {
    const std::vector<double> zs{0.1, 0.2};
    EXPECT_THROW(weights_Z_tilted(zs, 1.5, 1.0), DegenerateBatchError);
    EXPECT_THROW(weights_Z_tilted(zs, 1.5, 0.0), DomainError);
    EXPECT_THROW(weights_Z_tilted(zs, 0.0, 1.0), DomainError);
}

TEST(WeightsZTilted, NormalizedWeightsSumToOne) {
    const auto xs = draw(1000, RngStream(4, 3), [](RngStream& s) { return sample_Z(s, 0.7); });
    auto w = weights_Z_tilted(xs, 0.7, 0.3);
    normalize_weights(w);
    double sum = 0.0;
    for (const auto& x : w) {
        EXPECT_TRUE(std::isfinite(x.weight));
        EXPECT_GE(x.weight, 0.0);
        sum += x.weight;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(NoncentralChiSquare, Moments) {
    const auto central = draw(1000000, RngStream(5, 1), [](RngStream& s) { return sample_noncentral_chisq(s, 2.0, 0.0); });
    const auto mc = stats::mean_stderr(central);
    EXPECT_LT(std::abs(mc.mean - 2.0), 3.0 * mc.se);

    const auto xs = draw(1000000, RngStream(5, 2), [](RngStream& s) { return sample_noncentral_chisq(s, 3.0, 1.4); });
    const auto ms = stats::mean_stderr(xs);
    EXPECT_LT(std::abs(ms.mean - 4.4), 3.0 * ms.se);
    EXPECT_LT(std::abs(variance(xs) - 11.6), 3.0 * variance_se(xs));
}

TEST(NoncentralChiSquare, KolmogorovSmirnovAgainstBoost) {
    const auto xs = draw(100000, RngStream(5, 3), [](RngStream& s) { return sample_noncentral_chisq(s, 3.0, 5.0); });
    const auto ks = stats::ks_one_sample(xs, [](double x) { return oracle::noncentral_chisq_cdf(3.0, 5.0, x); });
    EXPECT_GT(ks.p_value, 0.01);
}

TEST(NoncentralChiSquare, Errors) {
    RngStream s(1, 1);
    EXPECT_THROW(sample_noncentral_chisq(s, 0.0, 1.0), DomainError);
    EXPECT_THROW(sample_noncentral_chisq(s, 1.0, -1.0), DomainError);
}
