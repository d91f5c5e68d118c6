#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <random>

#include "orthomed/multi_z.hpp"
#include "orthomed/sim_harness.hpp"
#include "support/oracles.hpp"

using namespace orthomed;

namespace {

MultiTargetSample small_multi(std::uint64_t rep, int p1 = 4)
{
    MultiTargetSpec spec;
    spec.n = 150;
    spec.p1 = p1;
    spec.pu = 12;
    spec.nonzero = 2;
    RngStream rng(5, rep);
    return generate_multi(spec, rng);
}

Matrix studentized_column(int n, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    Vector phi = oracle::random_vector(n, gen);
    phi /= std::sqrt(phi.squaredNorm() / n);
    return phi;
}

} // namespace

TEST(FitAllTargets, SingleTargetReducesToRunAlgorithm)
{
    const MultiTargetSample m = small_multi(0, 1);
    OrthoConfig config;
    config.seed = 31;
    const TargetEstimates est = fit_all_targets(m.y, m.D, m.U, config);
    const InferenceResult direct = run_algorithm(Sample(m.y, m.D.col(0), m.U), config);
    ASSERT_TRUE(est.status[0].ok);
    EXPECT_EQ(est.alpha(0), direct.alpha_check);
    EXPECT_EQ(est.sigma(0), direct.sigma_hat);
    EXPECT_EQ(est.gamma(0), -direct.variance.j_hat);
}

TEST(FitAllTargets, ControlsAreOtherTargetsThenU)
{
    const MultiTargetSample m = small_multi(1);
    const Sample s = target_sample(m.y, m.D, m.U, 2);
    EXPECT_EQ(s.d(), m.D.col(2));
    EXPECT_EQ(s.p(), 3 + m.U.cols());
    EXPECT_EQ(s.x().col(0), m.D.col(0));
    EXPECT_EQ(s.x().col(2), m.D.col(3));
    EXPECT_EQ(s.x().rightCols(m.U.cols()), m.U);
    EXPECT_THROW(target_sample(m.y, m.D, m.U, 4), Error);
}

TEST(FitAllTargets, PermutingTargetsPermutesOutputs)
{
    const MultiTargetSample m = small_multi(2);
    const std::vector<int> perm{2, 0, 3, 1};
    Matrix Dp(m.D.rows(), m.D.cols());
    for (int k = 0; k < 4; ++k) {
        Dp.col(k) = m.D.col(perm[static_cast<std::size_t>(k)]);
    }
    const TargetEstimates a = fit_all_targets(m.y, m.D, m.U, OrthoConfig{});
    const TargetEstimates b = fit_all_targets(m.y, Dp, m.U, OrthoConfig{});
    for (int k = 0; k < 4; ++k) {
        const int j = perm[static_cast<std::size_t>(k)];
        EXPECT_NEAR(b.alpha(k), a.alpha(j), 1e-6);
        EXPECT_NEAR(b.sigma(k), a.sigma(j), 1e-6);
    }
}

TEST(FitAllTargets, ThreadCountDoesNotMatter)
{
    const MultiTargetSample m = small_multi(3);
    const TargetEstimates a = fit_all_targets(m.y, m.D, m.U, OrthoConfig{}, 1);
    const TargetEstimates b = fit_all_targets(m.y, m.D, m.U, OrthoConfig{}, 3);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_EQ(a.sigma, b.sigma);
    EXPECT_EQ(a.psi, b.psi);
}

TEST(FitAllTargets, DegenerateTargetIsExcluded)
{
    // Duplicating target 0 makes it a perfect control for target 3 and
    // vice versa, so both instruments vanish.
    const MultiTargetSample m = small_multi(4);
    Matrix D = m.D;
    D.col(3) = D.col(0);
    const TargetEstimates est = fit_all_targets(m.y, D, m.U, OrthoConfig{});
    EXPECT_FALSE(est.status[0].ok);
    EXPECT_FALSE(est.status[3].ok);
    EXPECT_NE(est.status[0].error.find("InstrumentDegenerate"), std::string::npos);
    EXPECT_TRUE(est.status[1].ok);
    EXPECT_EQ(est.usable(), (IndexSet{1, 2}));
    const InfluenceMatrix inf = influence_matrix(est);
    EXPECT_EQ(inf.targets, (IndexSet{1, 2}));
    EXPECT_EQ(inf.phi.cols(), 2);
    const auto bands = simultaneous_bands(est, 2.0);
    EXPECT_FALSE(bands[0].ok);
    EXPECT_TRUE(std::isnan(bands[0].interval.lo));
    EXPECT_TRUE(bands[1].ok);
}

TEST(InfluenceMatrix, StudentizedColumns)
{
    const MultiTargetSample m = small_multi(5);
    const TargetEstimates est = fit_all_targets(m.y, m.D, m.U, OrthoConfig{});
    const InfluenceMatrix inf = influence_matrix(est);
    ASSERT_EQ(inf.phi.cols(), 4);
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(inf.phi.col(k).squaredNorm() / inf.phi.rows(), 1.0, 0.1);
        EXPECT_GT(est.sigma(k), 0.0);
        EXPECT_NE(est.gamma(k), 0.0);
    }
}

TEST(MultiplierBootstrap, SingleColumnQuantile)
{
    const Matrix phi = studentized_column(300, 1);
    const BootstrapResult r = multiplier_bootstrap(phi, 5000, 0.05, 77);
    EXPECT_NEAR(r.c_hat, 1.96, 0.1);
    EXPECT_EQ(r.draws.size(), 5000u);
}

TEST(MultiplierBootstrap, ZeroInfluence)
{
    const BootstrapResult r = multiplier_bootstrap(Matrix::Zero(50, 3), 300, 0.05, 1);
    EXPECT_EQ(r.c_hat, 0.0);
    for (double d : r.draws) {
        EXPECT_EQ(d, 0.0);
    }
}

TEST(MultiplierBootstrap, DuplicateColumnLeavesQuantile)
{
    std::mt19937_64 gen(2);
    const Matrix phi = oracle::random_matrix(100, 3, gen);
    Matrix dup(100, 4);
    dup << phi, phi.col(1);
    EXPECT_NEAR(multiplier_bootstrap(phi, 1000, 0.05, 9).c_hat, multiplier_bootstrap(dup, 1000, 0.05, 9).c_hat, 1e-12);
}

TEST(MultiplierBootstrap, ConditionalNormality)
{
    std::mt19937_64 gen(3);
    const Matrix phi = oracle::random_matrix(200, 3, gen);
    const Matrix draws = multiplier_draws(phi, 5000, 11);
    for (int j = 0; j < 3; ++j) {
        const double sd = std::sqrt(phi.col(j).squaredNorm() / 200.0);
        std::vector<double> col(draws.col(j).data(), draws.col(j).data() + draws.rows());
        const double ks = oracle::ks_statistic(col, [&](double x) { return oracle::normal_cdf(x / sd); });
        EXPECT_GT(oracle::ks_pvalue(ks, col.size()), 0.01) << "column " << j;
    }
}

TEST(MultiplierBootstrap, MonotoneInXiAndThreadInvariant)
{
    std::mt19937_64 gen(4);
    const Matrix phi = oracle::random_matrix(80, 6, gen);
    double last = 0.0;
    for (double xi : {0.5, 0.2, 0.1, 0.05, 0.01}) {
        const double c = multiplier_bootstrap(phi, 2000, xi, 5).c_hat;
        EXPECT_GE(c, last);
        last = c;
    }
    EXPECT_EQ(multiplier_draws(phi, 500, 5, 1), multiplier_draws(phi, 500, 5, 4));
    EXPECT_THROW(multiplier_bootstrap(phi, 199, 0.05, 5), Error);
    EXPECT_THROW(multiplier_bootstrap(phi, 500, 1.0, 5), Error);
}

TEST(Bands, WidthsAndNesting)
{
    const MultiTargetSample m = small_multi(6);
    const TargetEstimates est = fit_all_targets(m.y, m.D, m.U, OrthoConfig{});
    const auto points = simultaneous_bands(est, 0.0);
    for (const Band& b : points) {
        EXPECT_EQ(b.interval.lo, b.alpha);
        EXPECT_EQ(b.interval.hi, b.alpha);
    }
    const double z = normal_quantile(0.975);
    const auto marginal = marginal_bands(est, 0.05);
    const auto simultaneous = simultaneous_bands(est, z + 0.3);
    for (std::size_t k = 0; k < marginal.size(); ++k) {
        EXPECT_NEAR(marginal[k].interval.width(), 2.0 * z * est.sigma(static_cast<int>(k)) / std::sqrt(150.0),
                    1e-12);
        EXPECT_LE(simultaneous[k].interval.lo, marginal[k].interval.lo);
        EXPECT_GE(simultaneous[k].interval.hi, marginal[k].interval.hi);
    }
    EXPECT_THROW(simultaneous_bands(est, -1.0), Error);
}

TEST(Bands, CustomFitterIsUsed)
{
    const MultiTargetSample m = small_multi(7, 2);
    int calls = 0;
    std::mutex mu;
    const TargetFitter fitter = [&](const Sample& s, const OrthoConfig& c, RngStream rng) {
        {
            std::lock_guard<std::mutex> lock(mu);
            ++calls;
        }
        TargetFit f = median_target_fit(s, c, rng);
        f.result.alpha_check = 42.0;
        return f;
    };
    const TargetEstimates est = fit_all_targets(m.y, m.D, m.U, OrthoConfig{}, 1, fitter);
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(est.alpha(0), 42.0);
}
