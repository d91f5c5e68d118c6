#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "orthomed/core_data.hpp"
#include "orthomed/lad_lp.hpp"

namespace orthomed {

/// Result of an l1-penalized or unpenalized median regression of y on
/// (d, x). For refits, coefficients outside the refit support are zero
/// and lambda is 0.
struct LadFit {
    double alpha = 0.0;
    Vector beta;
    IndexSet support;
    double objective = 0.0;
    double lambda = 0.0;
    SolverStatus solver_status = SolverStatus::Optimal;
    int iterations = 0;
    double duality_gap = 0.0;
    std::vector<std::string> warnings;
};

struct L1MedianOptions {
    LadLpOptions lp;
    /// |beta_j| <= zero_tolerance * max(1, ||beta||_inf) is treated as zero.
    double zero_tolerance = 1e-7;
};

/// E_n|y - d alpha - x beta| + (lambda / n) ||Psi (alpha, beta)||_1.
inline double l1_median_objective(const Sample& sample, double alpha, const Vector& beta, double lambda,
                                  const PenaltyWeights& weights)
{
    const double n = sample.n();
    const Vector resid = sample.y() - sample.d() * alpha - sample.x() * beta;
    double pen = 0.0;
    if (lambda > 0.0) {
        pen = weights.psi(0) * std::abs(alpha);
        for (int j = 0; j < sample.p(); ++j) {
            pen += weights.psi(j + 1) * std::abs(beta(j));
        }
    }
    return resid.lpNorm<1>() / n + lambda / n * pen;
}

namespace detail {

inline void zero_small_coefficients(Vector& beta, double tolerance)
{
    const double cutoff = tolerance * std::max(1.0, beta.size() ? beta.cwiseAbs().maxCoeff() : 0.0);
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        if (std::abs(beta(j)) <= cutoff) {
            beta(j) = 0.0;
        }
    }
}

} // namespace detail

/// l1-penalized median regression
///   min E_n|y - d alpha - x beta| + (lambda / n) ||Psi (alpha, beta)||_1.
inline LadFit solve_l1_median(const Sample& sample, double lambda, const PenaltyWeights& weights,
                              const L1MedianOptions& options = {})
{
    require(lambda >= 0.0, "penalty level must be non-negative");
    require(weights.psi.size() == sample.p() + 1, "penalty weights need p + 1 entries");
    require((weights.psi.array() >= 0.0).all(), "penalty weights must be non-negative");

    const Matrix xt = sample.xtilde();
    const Vector pen = lambda * weights.psi;
    const LadLpResult lp = solve_lad_lp(xt, sample.y(), pen, sample.n(), options.lp);

    LadFit fit;
    fit.alpha = lp.coef(0);
    fit.beta = lp.coef.tail(sample.p());
    detail::zero_small_coefficients(fit.beta, options.zero_tolerance);
    fit.support = support_of(fit.beta, 0.0);
    fit.lambda = lambda;
    fit.solver_status = lp.status;
    fit.iterations = lp.iterations;
    fit.duality_gap = lp.gap / sample.n();
    fit.objective = l1_median_objective(sample, fit.alpha, fit.beta, lambda, weights);
    return fit;
}

/// Unpenalized median regression of y on d (when include_d) and the
/// control columns in `support`. Columns that are linearly dependent on
/// earlier ones (d first, then controls in index order) are dropped with a
/// warning.
inline LadFit lad_refit(const Sample& sample, const IndexSet& support, bool include_d,
                        const L1MedianOptions& options = {})
{
    require(static_cast<int>(support.size()) + 1 < sample.n(), "refit support too large for the sample size");
    for (int j : support) {
        require(j >= 0 && j < sample.p(), "refit support index out of range");
    }

    const Eigen::Index n = sample.n();
    std::vector<int> cols; // -1 encodes d
    if (include_d) {
        cols.push_back(-1);
    }
    cols.insert(cols.end(), support.begin(), support.end());

    LadFit fit;
    fit.beta = Vector::Zero(sample.p());

    // Greedy modified Gram-Schmidt to find an independent column subset.
    std::vector<int> kept;
    Matrix basis(n, static_cast<Eigen::Index>(cols.size()));
    Eigen::Index rank = 0;
    for (int c : cols) {
        Vector col = c < 0 ? sample.d() : Vector(sample.x().col(c));
        const double norm0 = col.norm();
        for (Eigen::Index k = 0; k < rank; ++k) {
            col -= basis.col(k).dot(col) * basis.col(k);
        }
        const double norm = col.norm();
        if (norm0 == 0.0 || norm <= 1e-10 * norm0) {
            fit.warnings.push_back(std::string(to_string(ErrorCode::RankDeficient)) + ": dropped collinear column " +
                                   (c < 0 ? std::string("d") : "x" + std::to_string(c + 1)));
            continue;
        }
        basis.col(rank++) = col / norm;
        kept.push_back(c);
    }

    Matrix design(n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) {
        design.col(static_cast<Eigen::Index>(k)) = kept[k] < 0 ? sample.d() : Vector(sample.x().col(kept[k]));
    }
    const LadLpResult lp =
        solve_lad_lp(design, sample.y(), Vector::Zero(design.cols()), sample.n(), options.lp);

    for (std::size_t k = 0; k < kept.size(); ++k) {
        const double v = lp.coef(static_cast<Eigen::Index>(k));
        if (kept[k] < 0) {
            fit.alpha = v;
        } else {
            fit.beta(kept[k]) = v;
        }
    }
    detail::zero_small_coefficients(fit.beta, options.zero_tolerance);
    fit.support = support_of(fit.beta, 0.0);
    fit.lambda = 0.0;
    fit.solver_status = lp.status;
    fit.iterations = lp.iterations;
    fit.duality_gap = lp.gap / sample.n();
    fit.objective = l1_median_objective(sample, fit.alpha, fit.beta, 0.0, PenaltyWeights{});
    return fit;
}

/// gamma = 0.1 / log n.
inline double default_gamma(int n) { return 0.1 / std::log(static_cast<double>(n)); }

/// Simulated pivotal penalty for a generic design xt with loadings psi:
///   c0 * n * Q(1 - gamma, ||Psi^{-1} E_n[R_i xt_i]||_inf),
/// R_i = 2 (1/2 - 1{U_i <= 1/2}) a Rademacher sign built from U_i ~ U(0,1).
/// Columns with psi_j = 0 are unpenalized and excluded from the sup-norm.
inline double pivotal_penalty_level(const Matrix& xt, const Vector& psi, double gamma, double c0, int n_sim,
                                    RngStream& rng)
{
    require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    require(c0 > 1.0, "c0 must exceed 1");
    require(n_sim >= 100, "pivotal penalty needs at least 100 simulations");
    require(psi.size() == xt.cols(), "loadings length differs from column count");

    const Eigen::Index n = xt.rows();
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < psi.size(); ++j) {
        if (psi(j) > 0.0) {
            active.push_back(j);
        }
    }
    Matrix scaled(n, static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
        scaled.col(static_cast<Eigen::Index>(k)) = xt.col(active[k]) / (psi(active[k]) * static_cast<double>(n));
    }

    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(n_sim));
    constexpr int block = 256;
    for (int start = 0; start < n_sim; start += block) {
        const int width = std::min(block, n_sim - start);
        Matrix signs(n, width);
        for (int s = 0; s < width; ++s) {
            for (Eigen::Index i = 0; i < n; ++i) {
                signs(i, s) = 2.0 * sign_score(rng.uniform() - 0.5);
            }
        }
        const Matrix scores = scaled.transpose() * signs;
        for (int s = 0; s < width; ++s) {
            stats.push_back(scores.rows() ? scores.col(s).cwiseAbs().maxCoeff() : 0.0);
        }
    }
    return c0 * static_cast<double>(n) * quantile_type7(std::move(stats), 1.0 - gamma);
}

struct PivotalPenaltyOptions {
    /// Unset means the default 0.1 / log n.
    std::optional<double> gamma;
    double c0 = 1.1;
    int n_sim = 1000;
    bool penalize_intercept = true;
};

/// Pivotal penalty for the median regression of y on (d, x) with
/// column_loadings(sample). When penalize_intercept is false, every
/// all-ones control column is left out of the sup-norm.
inline double pivotal_penalty_median(const Sample& sample, const PivotalPenaltyOptions& options, RngStream& rng)
{
    Vector psi = column_loadings(sample).psi;
    if (!options.penalize_intercept) {
        for (int j = 0; j < sample.p(); ++j) {
            if (is_intercept_column(sample, j)) {
                psi(j + 1) = 0.0;
            }
        }
    }
    const double gamma = options.gamma.value_or(default_gamma(sample.n()));
    return pivotal_penalty_level(sample.xtilde(), psi, gamma, options.c0, options.n_sim, rng);
}

/// Keeps the m largest |beta_j| (ties to the lower index) and recomputes
/// the objective on `sample`.
inline LadFit truncate_coefficients(const LadFit& fit, int m, const Sample& sample, const PenaltyWeights& weights)
{
    require(m >= 1, "truncation size must be at least 1");
    if (static_cast<int>(fit.support.size()) <= m) {
        return fit;
    }
    std::vector<int> order(fit.support.begin(), fit.support.end());
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(fit.beta(a)) > std::abs(fit.beta(b)); });
    LadFit out = fit;
    out.beta.setZero();
    for (int k = 0; k < m; ++k) {
        out.beta(order[static_cast<std::size_t>(k)]) = fit.beta(order[static_cast<std::size_t>(k)]);
    }
    out.support = support_of(out.beta, 0.0);
    out.objective = l1_median_objective(sample, out.alpha, out.beta, out.lambda, weights);
    return out;
}

} // namespace orthomed
