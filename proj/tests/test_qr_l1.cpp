#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "orthomed/qr_l1.hpp"
#include "support/oracle_suites.hpp"
#include "support/oracles.hpp"

using namespace orthomed;

namespace {

Sample random_sample(int n, int p, std::uint64_t seed, bool intercept = true)
{
    std::mt19937_64 gen(seed);
    Matrix x = oracle::random_matrix(n, p, gen);
    if (intercept) {
        x.col(0).setOnes();
    }
    const Vector d = oracle::random_vector(n, gen) + 0.3 * x.col(p - 1);
    Vector beta = Vector::Zero(p);
    beta(0) = 1.0;
    if (p > 1) {
        beta(1) = -0.5;
    }
    const Vector y = 0.5 * d + x * beta + oracle::random_vector(n, gen);
    return {y, d, x};
}

double data_term(const Sample& s, const LadFit& f)
{
    return (s.y() - s.d() * f.alpha - s.x() * f.beta).lpNorm<1>() / s.n();
}

} // namespace

TEST(SolveL1Median, InterceptOnlyGivesMedian)
{
    // d is a zero column carrying zero loading, so only the intercept acts.
    Vector y(3);
    y << 1.0, 2.0, 9.0;
    const Sample s(y, Vector::Zero(3), Matrix::Ones(3, 1));
    const LadFit fit = solve_l1_median(s, 0.0, PenaltyWeights{Vector::Ones(2)});
    EXPECT_NEAR(fit.beta(0), 2.0, 1e-6);
    EXPECT_NEAR(fit.objective, 8.0 / 3.0, 1e-8);
}

TEST(SolveL1Median, PerfectFit)
{
    std::mt19937_64 gen(3);
    const Vector d = oracle::random_vector(10, gen);
    const Sample s(2.0 * d, d, Matrix::Ones(10, 1));
    const LadFit fit = solve_l1_median(s, 0.0, column_loadings(s));
    EXPECT_NEAR(fit.alpha, 2.0, 1e-7);
    EXPECT_NEAR(fit.beta(0), 0.0, 1e-7);
    EXPECT_NEAR(fit.objective, 0.0, 1e-8);
    EXPECT_EQ(fit.solver_status, SolverStatus::Optimal);
}

TEST(SolveL1Median, PenalizedMatchesVertexOracle)
{
    const Sample s = random_sample(30, 3, 5);
    const PenaltyWeights w = column_loadings(s);
    const LadFit fit = solve_l1_median(s, 5.0, w);
    const auto ref = oracle::lad_vertex_enumeration(s.xtilde(), s.y(), 5.0, w.psi);
    EXPECT_NEAR(fit.objective, ref.objective, 1e-6);
}

TEST(SolveL1Median, UnpenalizedMatchesVertexOracleOnRandomInstances)
{
    const auto r = oracle::lad_vertex_suite(100, 2024);
    EXPECT_EQ(r.instances, 100);
    EXPECT_LE(r.worst, 1e-6);
}

TEST(SolveL1Median, PenalizedMatchesVertexOracleAcrossLambdas)
{
    std::mt19937_64 gen(77);
    for (int t = 0; t < 20; ++t) {
        const Sample s = oracle::small_instance(gen);
        const PenaltyWeights w = column_loadings(s);
        for (double lambda : {0.5, 3.0, 12.0}) {
            const LadFit fit = solve_l1_median(s, lambda, w);
            const auto ref = oracle::lad_vertex_enumeration(s.xtilde(), s.y(), lambda, w.psi);
            EXPECT_NEAR(fit.objective, ref.objective, 1e-6) << "instance " << t << " lambda " << lambda;
        }
    }
}

TEST(SolveL1Median, ObjectiveRecomputesFromCoefficients)
{
    const Sample s = random_sample(60, 8, 9);
    const PenaltyWeights w = column_loadings(s);
    const LadFit fit = solve_l1_median(s, 20.0, w);
    EXPECT_NEAR(fit.objective, l1_median_objective(s, fit.alpha, fit.beta, 20.0, w), 1e-9);
    EXPECT_LE(fit.duality_gap, 1e-8 * (1.0 + fit.objective) + 1e-12);
    EXPECT_EQ(fit.support, support_of(fit.beta, 0.0));
}

TEST(SolveL1Median, SubgradientCertificate)
{
    const Sample s = random_sample(40, 4, 21);
    const PenaltyWeights w = column_loadings(s);
    const double lambda = 8.0;
    const LadFit fit = solve_l1_median(s, lambda, w);
    Vector b(5);
    b << fit.alpha, fit.beta;
    auto f = [&](const Vector& c) { return l1_median_objective(s, c(0), c.tail(4), lambda, w); };
    const Vector dd = oracle::directional_derivatives(f, b, 1e-7);
    EXPECT_GE(dd.minCoeff(), -1e-6);
}

TEST(SolveL1Median, ScaleEquivarianceAtZeroPenalty)
{
    const Sample s = random_sample(50, 3, 31);
    const Sample scaled(3.5 * s.y(), s.d(), s.x());
    const LadFit a = solve_l1_median(s, 0.0, column_loadings(s));
    const LadFit b = solve_l1_median(scaled, 0.0, column_loadings(scaled));
    EXPECT_NEAR(b.alpha, 3.5 * a.alpha, 1e-6);
    EXPECT_LE((b.beta - 3.5 * a.beta).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SolveL1Median, PenaltyNormNonIncreasingInLambda)
{
    const Sample s = random_sample(80, 12, 41);
    const PenaltyWeights w = column_loadings(s);
    double last = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0}) {
        const LadFit fit = solve_l1_median(s, lambda, w);
        double norm = w.psi(0) * std::abs(fit.alpha);
        for (int j = 0; j < s.p(); ++j) {
            norm += w.psi(j + 1) * std::abs(fit.beta(j));
        }
        EXPECT_LE(norm, last + 1e-6) << lambda;
        last = norm;
    }
}

TEST(SolveL1Median, RejectsBadArguments)
{
    const Sample s = random_sample(20, 2, 1);
    EXPECT_THROW(solve_l1_median(s, -1.0, column_loadings(s)), Error);
    EXPECT_THROW(solve_l1_median(s, 1.0, PenaltyWeights{Vector::Ones(2)}), Error);
}

TEST(LadRefit, EmptySupportIsLadOnD)
{
    const Sample s = random_sample(40, 3, 51);
    const LadFit refit = lad_refit(s, {}, true);
    const auto ref = oracle::lad_vertex_enumeration(s.d(), s.y(), 0.0, Vector::Ones(1));
    EXPECT_NEAR(refit.objective, ref.objective, 1e-8);
    EXPECT_TRUE(refit.beta.isZero());
    EXPECT_EQ(refit.lambda, 0.0);
}

TEST(LadRefit, FullSupportMatchesUnpenalizedSolve)
{
    const Sample s = random_sample(40, 4, 52);
    const LadFit refit = lad_refit(s, {0, 1, 2, 3}, true);
    const LadFit full = solve_l1_median(s, 0.0, column_loadings(s));
    EXPECT_NEAR(refit.objective, full.objective, 1e-8);
    EXPECT_NEAR(refit.alpha, full.alpha, 1e-6);
}

TEST(LadRefit, DataTermBelowPenalizedOnSameSupport)
{
    const Sample s = random_sample(40, 5, 53);
    const LadFit pen = solve_l1_median(s, 10.0, column_loadings(s));
    const LadFit refit = lad_refit(s, pen.support, true);
    EXPECT_LE(refit.objective, data_term(s, pen) + 1e-9);
}

TEST(LadRefit, DropsCollinearColumnWithWarning)
{
    const Sample base = random_sample(30, 3, 54);
    Matrix x(30, 4);
    x << base.x(), base.x().col(1);
    const Sample s(base.y(), base.d(), x);
    const LadFit refit = lad_refit(s, {0, 1, 2, 3}, true);
    ASSERT_EQ(refit.warnings.size(), 1u);
    EXPECT_NE(refit.warnings[0].find("x4"), std::string::npos);
    EXPECT_EQ(refit.beta(3), 0.0);
    const LadFit clean = lad_refit(base, {0, 1, 2}, true);
    EXPECT_NEAR(refit.objective, clean.objective, 1e-8);
}

TEST(LadRefit, RejectsOversizedSupport)
{
    const Sample s = random_sample(4, 3, 55);
    EXPECT_THROW(lad_refit(s, {0, 1, 2}, true), Error);
}

TEST(PivotalPenalty, RademacherOracleAtPZero)
{
    // x~ = d = ones only: the statistic is |mean of n Rademacher signs|.
    // Its exact law is that of |2 B / n - 1|, B ~ Binomial(n, 1/2).
    const int n = 50;
    Matrix xt = Matrix::Ones(n, 1);
    RngStream rng(3, 0);
    const double level = pivotal_penalty_level(xt, Vector::Ones(1), 0.5, 1.1, 20000, rng);
    // Exact median of |2B/n - 1| from the binomial pmf.
    double cdf = 0.0;
    std::vector<double> pmf(n + 1);
    for (int b = 0; b <= n; ++b) {
        pmf[b] = std::exp(std::lgamma(n + 1.0) - std::lgamma(b + 1.0) - std::lgamma(n - b + 1.0) - n * std::log(2.0));
    }
    double median = 0.0;
    for (int k = 0; k <= n / 2; ++k) {
        const double value = std::abs(2.0 * (n / 2 + k) / n - 1.0);
        cdf += k == 0 ? pmf[n / 2] : 2.0 * pmf[n / 2 + k];
        if (cdf >= 0.5) {
            median = value;
            break;
        }
    }
    EXPECT_NEAR(level / (1.1 * n), median, 0.02);
}

TEST(PivotalPenalty, MonotoneInGamma)
{
    const Sample s = random_sample(100, 10, 61);
    PivotalPenaltyOptions lo;
    lo.gamma = 0.999;
    PivotalPenaltyOptions hi;
    hi.gamma = 0.01;
    RngStream r1(5, 0);
    RngStream r2(5, 0);
    EXPECT_LE(pivotal_penalty_median(s, lo, r1), pivotal_penalty_median(s, hi, r2));
}

TEST(PivotalPenalty, DefaultGammaAndReproducibility)
{
    const Sample s = random_sample(100, 10, 62);
    PivotalPenaltyOptions def;
    PivotalPenaltyOptions expl;
    expl.gamma = 0.1 / std::log(100.0);
    RngStream r1(9, 2);
    RngStream r2(9, 2);
    EXPECT_EQ(pivotal_penalty_median(s, def, r1), pivotal_penalty_median(s, expl, r2));
    EXPECT_DOUBLE_EQ(default_gamma(100), 0.1 / std::log(100.0));
}

TEST(PivotalPenalty, LinearInC0)
{
    const Sample s = random_sample(60, 5, 63);
    PivotalPenaltyOptions a;
    a.c0 = 1.1;
    PivotalPenaltyOptions b;
    b.c0 = 2.2;
    RngStream r1(1, 1);
    RngStream r2(1, 1);
    EXPECT_NEAR(2.0 * pivotal_penalty_median(s, a, r1), pivotal_penalty_median(s, b, r2), 1e-9);
}

TEST(PivotalPenalty, UnpenalizedInterceptLeavesSupNorm)
{
    // With the intercept exempt only d and x2 remain in the sup-norm, so the
    // level cannot exceed the one that includes the intercept.
    const Sample s = random_sample(80, 2, 64);
    PivotalPenaltyOptions with;
    PivotalPenaltyOptions without;
    without.penalize_intercept = false;
    RngStream r1(2, 0);
    RngStream r2(2, 0);
    EXPECT_LE(pivotal_penalty_median(s, without, r2), pivotal_penalty_median(s, with, r1) + 1e-12);
}

TEST(PivotalPenalty, RejectsBadArguments)
{
    const Sample s = random_sample(30, 2, 65);
    RngStream r(0, 0);
    PivotalPenaltyOptions bad;
    bad.n_sim = 50;
    EXPECT_THROW(pivotal_penalty_median(s, bad, r), Error);
    bad = {};
    bad.c0 = 1.0;
    EXPECT_THROW(pivotal_penalty_median(s, bad, r), Error);
    bad = {};
    bad.gamma = 1.0;
    EXPECT_THROW(pivotal_penalty_median(s, bad, r), Error);
}

namespace {

LadFit fit_with_beta(const Vector& beta)
{
    LadFit f;
    f.beta = beta;
    f.support = support_of(beta, 0.0);
    return f;
}

} // namespace

TEST(Truncate, KeepsLargestMagnitudes)
{
    Vector beta(3);
    beta << 3.0, -5.0, 1.0;
    const Sample s = random_sample(10, 3, 71);
    const LadFit out = truncate_coefficients(fit_with_beta(beta), 2, s, column_loadings(s));
    EXPECT_EQ(out.beta(0), 3.0);
    EXPECT_EQ(out.beta(1), -5.0);
    EXPECT_EQ(out.beta(2), 0.0);
    EXPECT_EQ(out.support, (IndexSet{0, 1}));
    EXPECT_NEAR(out.objective, l1_median_objective(s, 0.0, out.beta, 0.0, column_loadings(s)), 1e-12);
}

TEST(Truncate, NoOpWhenSparseEnough)
{
    Vector beta(3);
    beta << 3.0, 0.0, 1.0;
    const Sample s = random_sample(10, 3, 72);
    LadFit f = fit_with_beta(beta);
    f.objective = 123.0;
    const LadFit out = truncate_coefficients(f, 2, s, column_loadings(s));
    EXPECT_EQ(out.beta, beta);
    EXPECT_EQ(out.objective, 123.0);
}

TEST(Truncate, TiesGoToLowerIndex)
{
    Vector beta(3);
    beta << 1.0, -1.0, 1.0;
    const Sample s = random_sample(10, 3, 73);
    const LadFit out = truncate_coefficients(fit_with_beta(beta), 1, s, column_loadings(s));
    EXPECT_EQ(out.support, (IndexSet{0}));
    EXPECT_THROW(truncate_coefficients(fit_with_beta(beta), 0, s, column_loadings(s)), Error);
}
