#pragma once

#include <cassert>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "orthomed/core_data.hpp"
#include "orthomed/lad_lp.hpp"
#include "orthomed/normal.hpp"

namespace orthomed {

/// Lasso of d on x with per-column loadings.
struct LassoFit {
    Vector theta;
    IndexSet support;
    double lambda = 0.0;
    Vector loadings;
    int iterations_of_loadings = 1;
    int sweeps = 0;
    SolverStatus status = SolverStatus::Optimal;
};

struct LassoOptions {
    double tolerance = 1e-10;
    int max_sweeps = 100000;
};

/// lambda = 2 c sqrt(n) Phi^{-1}(1 - gamma / (2p)).
inline double lasso_penalty_level(int n, int p, double gamma, double c)
{
    require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    require(n >= 1 && p >= 1, "lasso penalty needs n, p >= 1");
    return 2.0 * c * std::sqrt(static_cast<double>(n)) * normal_quantile(1.0 - gamma / (2.0 * p));
}

namespace detail {

inline Vector column_rms_weighted(const Matrix& x, const Vector& u)
{
    const Vector u2 = u.cwiseAbs2();
    Vector out(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out(j) = std::sqrt(x.col(j).cwiseAbs2().dot(u2) / static_cast<double>(x.rows()));
        if (!(out(j) > 0.0)) {
            throw Error(ErrorCode::DegenerateColumn, "lasso loading for x" + std::to_string(j + 1) + " is zero");
        }
    }
    return out;
}

inline double soft_threshold(double z, double t) { return z > t ? z - t : (z < -t ? z + t : 0.0); }

} // namespace detail

/// gamma_j = sqrt(E_n[x_j^2 (d - mean(d))^2]).
inline Vector initial_loadings(const Sample& sample)
{
    const Vector centered = sample.d().array() - sample.d().mean();
    return detail::column_rms_weighted(sample.x(), centered);
}

/// gamma_j = sqrt(E_n[x_j^2 vhat^2]).
inline Vector refined_loadings(const Sample& sample, const Vector& vhat)
{
    require(vhat.size() == sample.n(), "residual length differs from sample size");
    return detail::column_rms_weighted(sample.x(), vhat);
}

/// min_theta E_n (d - x theta)^2 + (lambda / n) sum_j loadings_j |theta_j|
/// by cyclic coordinate descent with covariance updates. Gram columns are
/// computed on first use and cached.
inline LassoFit solve_lasso(const Sample& sample, double lambda, const Vector& loadings,
                            const LassoOptions& options = {})
{
    const Matrix& x = sample.x();
    const Eigen::Index p = x.cols();
    const double n = sample.n();
    require(lambda >= 0.0, "penalty level must be non-negative");
    require(loadings.size() == p, "loadings length differs from column count");
    require((loadings.array() >= 0.0).all(), "lasso loadings must be non-negative");

    const Vector col_sq = x.colwise().squaredNorm().transpose() / n;
    Vector grad = x.transpose() * sample.d() / n; // E_n[x_j (d - x theta)]
    const Vector thresh = lambda * loadings / (2.0 * n);
    Vector theta = Vector::Zero(p);
    std::vector<Vector> gram_cols(static_cast<std::size_t>(p));
    auto gram_col = [&](Eigen::Index k) -> const Vector& {
        auto& g = gram_cols[static_cast<std::size_t>(k)];
        if (g.size() == 0) {
            g = x.transpose() * x.col(k) / n;
        }
        return g;
    };

#ifndef NDEBUG
    auto objective = [&] {
        return (sample.d() - x * theta).squaredNorm() / n + lambda / n * loadings.dot(theta.cwiseAbs());
    };
    double last_objective = objective();
#endif

    auto update = [&](Eigen::Index j) {
        if (col_sq(j) <= 0.0) {
            return 0.0;
        }
        const double rho = grad(j) + col_sq(j) * theta(j);
        const double next = detail::soft_threshold(rho, thresh(j)) / col_sq(j);
        const double delta = next - theta(j);
        if (delta != 0.0) {
            theta(j) = next;
            grad -= gram_col(j) * delta;
        }
        return std::abs(delta);
    };

    LassoFit fit;
    int sweeps = 0;
    bool converged = false;
    while (sweeps < options.max_sweeps) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            change = std::max(change, update(j));
        }
        ++sweeps;
#ifndef NDEBUG
        const double now = objective();
        assert(now <= last_objective + 1e-12 * (1.0 + std::abs(last_objective)));
        last_objective = now;
#endif
        if (change < options.tolerance) {
            converged = true;
            break;
        }
        // Iterate on the active set until it settles, then re-check all.
        std::vector<Eigen::Index> active;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (theta(j) != 0.0) {
                active.push_back(j);
            }
        }
        while (sweeps < options.max_sweeps) {
            double inner = 0.0;
            for (Eigen::Index j : active) {
                inner = std::max(inner, update(j));
            }
            ++sweeps;
            if (inner < options.tolerance) {
                break;
            }
        }
    }

    fit.theta = theta;
    fit.support = support_of(theta, 0.0);
    fit.lambda = lambda;
    fit.loadings = loadings;
    fit.sweeps = sweeps;
    fit.status = converged ? SolverStatus::Optimal : SolverStatus::IterationLimit;
    return fit;
}

/// Least squares of d on the columns in `support`; zeros elsewhere. A
/// rank-deficient restricted design falls back to the minimum-norm
/// solution and appends a warning.
inline Vector post_lasso(const Sample& sample, const IndexSet& support, std::vector<std::string>* warnings = nullptr)
{
    require(static_cast<int>(support.size()) < sample.n(), "post-lasso support too large for the sample size");
    Vector theta = Vector::Zero(sample.p());
    if (support.empty()) {
        return theta;
    }
    Matrix design(sample.n(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k) {
        design.col(static_cast<Eigen::Index>(k)) = sample.x().col(support[k]);
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
    if (cod.rank() < design.cols() && warnings != nullptr) {
        warnings->push_back(std::string(to_string(ErrorCode::RankDeficient)) +
                            ": post-lasso design has rank " + std::to_string(cod.rank()) + " < " +
                            std::to_string(design.cols()));
    }
    const Vector coef = cod.solve(sample.d());
    for (std::size_t k = 0; k < support.size(); ++k) {
        theta(support[k]) = coef(static_cast<Eigen::Index>(k));
    }
    return theta;
}

struct IteratedLassoOptions {
    /// Unset means 0.1 / log n.
    std::optional<double> gamma;
    double c = 1.1;
    /// Initial loadings then one refinement.
    int max_rounds = 2;
    double loading_tolerance = 1e-6;
    /// When false, all-ones columns get loading 0 and are never shrunk.
    bool penalize_intercept = true;
    LassoOptions solver;
};

/// Rounds beyond the two-step preset when iterating loadings to a fixed point.
inline constexpr int kMaxLoadingRounds = 15;

/// Round 1 uses initial_loadings; each later round recomputes
/// refined_loadings from the current lasso residuals and re-solves. Stops
/// once the loadings move by less than loading_tolerance.
inline LassoFit iterated_lasso(const Sample& sample, const IteratedLassoOptions& options = {})
{
    require(options.max_rounds >= 1, "iterated lasso needs at least one round");
    const double gamma = options.gamma.value_or(0.1 / std::log(static_cast<double>(sample.n())));
    const double lambda = lasso_penalty_level(sample.n(), sample.p(), gamma, options.c);

    auto exempt = [&](Vector l) {
        if (!options.penalize_intercept) {
            for (int j = 0; j < sample.p(); ++j) {
                if (is_intercept_column(sample, j)) {
                    l(j) = 0.0;
                }
            }
        }
        return l;
    };
    Vector loadings = exempt(initial_loadings(sample));
    LassoFit fit = solve_lasso(sample, lambda, loadings, options.solver);
    int rounds = 1;
    while (rounds < options.max_rounds) {
        const Vector vhat = sample.d() - sample.x() * fit.theta;
        const Vector next = exempt(refined_loadings(sample, vhat));
        if ((next - loadings).cwiseAbs().maxCoeff() < options.loading_tolerance) {
            break;
        }
        loadings = next;
        fit = solve_lasso(sample, lambda, loadings, options.solver);
        ++rounds;
    }
    fit.iterations_of_loadings = rounds;
    return fit;
}

} // namespace orthomed
