#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "orthomed/sim_harness.hpp"
#include "support/oracles.hpp"

using namespace orthomed;

namespace {

double correlation(const Vector& a, const Vector& b)
{
    const Vector ac = a.array() - a.mean();
    const Vector bc = b.array() - b.mean();
    return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

double variance(const Vector& a) { return (a.array() - a.mean()).square().mean(); }

ReplicationOutcome outcome(double est)
{
    ReplicationOutcome o;
    o.ok = true;
    o.alpha_est = est;
    return o;
}

} // namespace

TEST(ScaleForR2, Examples)
{
    const Matrix sigma = toeplitz_covariance(3, 0.5);
    EXPECT_EQ(scale_for_r2(Vector::Ones(3), sigma, 0.0), 0.0);
    Vector unit = Vector::Zero(3);
    unit(1) = 1.0;
    EXPECT_DOUBLE_EQ(scale_for_r2(unit, sigma, 0.5), 1.0);
    EXPECT_THROW(scale_for_r2(Vector::Zero(3), sigma, 0.5), Error);
    EXPECT_THROW(scale_for_r2(unit, sigma, 1.0), Error);
}

TEST(ScaleForR2, LargeSampleR2)
{
    const int k = 10;
    Vector theta(k);
    for (int j = 0; j < k; ++j) {
        theta(j) = 1.0 / ((j + 1.0) * (j + 1.0));
    }
    const Matrix sigma = toeplitz_covariance(k, 0.5);
    const double c = scale_for_r2(theta, sigma, 0.5);
    const Matrix l = oracle::cholesky_lower(sigma);
    RngStream rng(1, 0);
    const int n = 1000000;
    double s1 = 0.0, s2 = 0.0, e2 = 0.0;
    Vector z(k);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            z(j) = rng.normal();
        }
        const double signal = c * theta.dot(l * z);
        const double eps = rng.normal();
        s1 += signal;
        s2 += signal * signal;
        e2 += eps * eps;
    }
    const double vs = s2 / n - (s1 / n) * (s1 / n);
    EXPECT_NEAR(vs / (vs + e2 / n), 0.5, 0.005);
}

TEST(Generate, CholeskyMatchesDirectFactorization)
{
    const Matrix sigma = toeplitz_covariance(5, 0.5);
    EXPECT_DOUBLE_EQ(sigma(0, 4), 0.0625);
    DesignSpec spec;
    spec.p = 6;
    const PreparedDesign d = prepare(spec);
    EXPECT_LE((d.chol_lower - oracle::cholesky_lower(sigma)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Generate, Layout)
{
    DesignSpec spec;
    spec.n = 50;
    spec.p = 20;
    RngStream rng(3, 0);
    const Sample s = generate(spec, rng);
    EXPECT_EQ(s.n(), 50);
    EXPECT_EQ(s.p(), 20);
    EXPECT_TRUE(is_intercept_column(s, 0));
    const Vector sparse = design_theta(20, ThetaProfile::ExactSparse10);
    EXPECT_DOUBLE_EQ(sparse(0), 1.0);
    EXPECT_DOUBLE_EQ(sparse(9), 0.01);
    EXPECT_EQ(sparse(10), 0.0);
    const Vector dense = design_theta(20, ThetaProfile::PolyDecayAll);
    EXPECT_DOUBLE_EQ(dense(19), 1.0 / 400.0);
}

TEST(Generate, UncorrelatedWhenRhoZero)
{
    DesignSpec spec;
    spec.n = 1000;
    spec.p = 8;
    spec.rho = 0.0;
    RngStream rng(4, 0);
    const Sample s = generate(spec, rng);
    for (int a = 1; a < 8; ++a) {
        for (int b = a + 1; b < 8; ++b) {
            EXPECT_LT(std::abs(correlation(s.x().col(a), s.x().col(b))), 0.1);
        }
    }
}

TEST(Generate, TreatmentIndependentWhenR2dZero)
{
    DesignSpec spec;
    spec.n = 10000;
    spec.p = 15;
    spec.r2d = 0.0;
    RngStream rng(5, 0);
    const Sample s = generate(spec, rng);
    const Vector signal = s.x() * design_theta(15, spec.theta_profile);
    EXPECT_LT(std::abs(correlation(s.d(), signal)), 0.05);
}

TEST(Generate, EmpiricalR2AcrossGrid)
{
    DesignSpec base;
    base.n = 10000;
    base.p = 20;
    for (ThetaProfile profile : {ThetaProfile::ExactSparse10, ThetaProfile::PolyDecayAll}) {
        base.theta_profile = profile;
        for (const DesignSpec& spec : grid_designs(base, default_r2_levels(false))) {
            const PreparedDesign prep = prepare(spec);
            RngStream rng(6, 0);
            const Sample s = generate(prep, rng);
            const Vector signal = s.x() * prep.theta;
            const Vector ysig = prep.c_y * signal;
            const Vector dsig = prep.c_d * signal;
            const Vector yres = s.y() - spec.alpha0 * s.d();
            EXPECT_NEAR(variance(dsig) / variance(s.d()), spec.r2d, 0.02) << spec.r2y << "," << spec.r2d;
            EXPECT_NEAR(variance(ysig) / variance(yres), spec.r2y, 0.02) << spec.r2y << "," << spec.r2d;
        }
    }
}

TEST(Generate, StreamsReproduce)
{
    DesignSpec spec;
    spec.n = 30;
    spec.p = 10;
    RngStream a(8, 2);
    RngStream b(8, 2);
    RngStream c(8, 3);
    const Sample sa = generate(spec, a);
    const Sample sb = generate(spec, b);
    const Sample sc = generate(spec, c);
    EXPECT_EQ(sa.y(), sb.y());
    EXPECT_EQ(sa.x(), sb.x());
    EXPECT_NE(sa.y(), sc.y());
}

TEST(Summarize, Examples)
{
    const Metrics exact = summarize({outcome(0.5), outcome(0.5), outcome(0.5)}, 0.5);
    EXPECT_EQ(exact.mean_bias, 0.0);
    EXPECT_EQ(exact.sd, 0.0);
    EXPECT_EQ(exact.rmse, 0.0);
    const Metrics two = summarize({outcome(0.0), outcome(1.0)}, 0.5);
    EXPECT_DOUBLE_EQ(two.mean_bias, 0.0);
    EXPECT_DOUBLE_EQ(two.sd, 0.5);
    EXPECT_DOUBLE_EQ(two.rmse, 0.5);
}

TEST(Summarize, MatchesLoopAndIdentity)
{
    std::mt19937_64 gen(9);
    std::normal_distribution<double> z(0.6, 0.2);
    std::vector<ReplicationOutcome> outs;
    for (int i = 0; i < 157; ++i) {
        ReplicationOutcome o = outcome(z(gen));
        o.reject05 = i % 7 == 0;
        o.covered95 = !o.reject05;
        outs.push_back(o);
    }
    ReplicationOutcome failed;
    failed.ok = false;
    outs.push_back(failed);
    const Metrics m = summarize(outs, 0.5);
    double mean = 0.0;
    for (int i = 0; i < 157; ++i) {
        mean += outs[static_cast<std::size_t>(i)].alpha_est;
    }
    mean /= 157.0;
    double var = 0.0, mse = 0.0;
    for (int i = 0; i < 157; ++i) {
        const double e = outs[static_cast<std::size_t>(i)].alpha_est;
        var += (e - mean) * (e - mean);
        mse += (e - 0.5) * (e - 0.5);
    }
    EXPECT_NEAR(m.mean_bias, mean - 0.5, 1e-12);
    EXPECT_NEAR(m.sd, std::sqrt(var / 157.0), 1e-12);
    EXPECT_NEAR(m.rmse, std::sqrt(mse / 157.0), 1e-12);
    EXPECT_NEAR(m.rmse * m.rmse - (m.mean_bias * m.mean_bias + m.sd * m.sd), 0.0, 1e-10);
    EXPECT_EQ(m.reps, 157);
    EXPECT_EQ(m.failures, 1);
    EXPECT_NEAR(m.rejection_rate, 23.0 / 157.0, 1e-12);
    EXPECT_NEAR(m.coverage, 1.0 - 23.0 / 157.0, 1e-12);
}

TEST(Replicate, OutcomesConsistentWithStatistics)
{
    DesignSpec spec;
    spec.n = 120;
    spec.p = 60;
    const PreparedDesign prep = prepare(spec);
    const auto outs = replicate(prep, 0, default_methods(), OrthoConfig{});
    ASSERT_EQ(outs.size(), default_methods().size());
    for (const auto& o : outs) {
        ASSERT_TRUE(o.ok) << to_string(o.method) << ": " << o.error;
        if (o.method == Method::ScoreTest) {
            EXPECT_EQ(o.reject05, o.statistic > 3.8415);
        } else {
            const double t = std::abs(o.alpha_est - 0.5) * std::sqrt(120.0) / o.sigma_est;
            EXPECT_NEAR(o.statistic, t, 1e-12);
            EXPECT_EQ(o.reject05, t > normal_quantile(0.975));
        }
        EXPECT_EQ(o.covered95, !o.reject05);
    }
}

TEST(RunGrid, DeterministicAcrossRunsAndThreads)
{
    DesignSpec spec;
    spec.n = 80;
    spec.p = 40;
    spec.seed = 12;
    const std::vector<Method> methods{Method::NaivePost, Method::OrthoAlg1, Method::ScoreTest};
    const GridResult a = run_grid({spec}, 1, methods, 1);
    const GridResult b = run_grid({spec}, 1, methods, 1);
    ASSERT_EQ(a.rows.size(), 3u);
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        EXPECT_EQ(a.rows[k].metrics.mean_bias, b.rows[k].metrics.mean_bias);
        EXPECT_EQ(a.rows[k].metrics.rejection_rate, b.rows[k].metrics.rejection_rate);
    }
    DesignSpec other = spec;
    other.r2y = 0.3;
    const GridResult c = run_grid({spec, other}, 3, methods, 1);
    const GridResult d = run_grid({spec, other}, 3, methods, 3);
    ASSERT_EQ(c.rows.size(), 6u);
    for (std::size_t k = 0; k < c.rows.size(); ++k) {
        EXPECT_EQ(c.rows[k].metrics.mean_bias, d.rows[k].metrics.mean_bias);
        EXPECT_EQ(c.rows[k].metrics.sd, d.rows[k].metrics.sd);
    }
    EXPECT_THROW(run_grid({spec}, 0, methods, 1), Error);
}

TEST(RunGrid, GridLevels)
{
    EXPECT_EQ(default_r2_levels(false).size(), 5u);
    EXPECT_EQ(default_r2_levels(true).size(), 10u);
    EXPECT_EQ(grid_designs(DesignSpec{}, default_r2_levels(false)).size(), 25u);
    EXPECT_EQ(parse_method("naive_post"), Method::NaivePost);
    EXPECT_FALSE(parse_method("nope").has_value());
    for (Method m : default_methods()) {
        EXPECT_EQ(parse_method(to_string(m)), m);
    }
}

TEST(MultiTarget, DesignShape)
{
    MultiTargetSpec spec;
    RngStream rng(1, 0);
    const MultiTargetSample s = generate_multi(spec, rng);
    EXPECT_EQ(s.D.cols(), 20);
    EXPECT_EQ(s.U.cols(), 30);
    EXPECT_EQ(s.alpha.head(5), Vector::Constant(5, 0.5));
    EXPECT_TRUE(s.alpha.tail(15).isZero());
    EXPECT_TRUE((s.U.col(0).array() == 1.0).all());
    spec.pu = 20;
    EXPECT_THROW(generate_multi(spec, rng), Error);
}

TEST(MultiTarget, BandReplicationReproduces)
{
    MultiTargetSpec spec;
    spec.n = 150;
    spec.p1 = 3;
    spec.pu = 10;
    spec.nonzero = 1;
    const BandReplication a = band_replication(spec, 4, OrthoConfig{}, 500, 0.05);
    const BandReplication b = band_replication(spec, 4, OrthoConfig{}, 500, 0.05);
    ASSERT_TRUE(a.ok) << a.error;
    EXPECT_EQ(a.usable, 3);
    EXPECT_EQ(a.c_hat, b.c_hat);
    EXPECT_EQ(a.covered_all, b.covered_all);
    EXPECT_GT(a.c_hat, normal_quantile(0.975) - 0.2);
}
