#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "orthomed/core_data.hpp"
#include "orthomed/ortho_mid.hpp"
#include "orthomed/parallel.hpp"

namespace orthomed {

/// Output of one per-target fit: the inference result and the score
/// psi(w_i, alpha_check, h_hat) evaluated at every observation.
struct TargetFit {
    InferenceResult result;
    Vector psi;
};

/// Fits one target given a sample whose treatment is that target. Swap
/// this to use a score other than the median-regression one.
using TargetFitter = std::function<TargetFit(const Sample&, const OrthoConfig&, RngStream)>;

/// Algorithm 1 with psi_i = phi(y_i - d_i alpha - x_i'beta) vhat_i.
inline TargetFit median_target_fit(const Sample& sample, const OrthoConfig& config, RngStream rng)
{
    const FirstStage s1 = first_stage(sample, config, rng);
    const SecondStage s2 = second_stage(sample, config);
    const auto [gfit, vhat] = alg1_nuisance(sample, s1, s2);
    TargetFit out;
    out.result = run_alg1(sample, s1, s2, config);
    out.psi.resize(sample.n());
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
        out.psi(i) = sign_score(sample.y()(i) - gfit(i) - sample.d()(i) * out.result.alpha_check) * vhat(i);
    }
    return out;
}

struct TargetStatus {
    bool ok = false;
    std::string error;
};

/// Per-target estimates. Failed targets hold NaN and are left out of the
/// influence matrix and the bands.
struct TargetEstimates {
    int n = 0;
    Vector alpha;
    Vector sigma;
    /// Gamma_j = -J_j, the alpha-derivative of the expected score.
    Vector gamma;
    std::vector<TargetStatus> status;
    std::vector<InferenceResult> results;
    /// Columns psi_j; zero for failed targets.
    Matrix psi;

    int targets() const { return static_cast<int>(status.size()); }

    IndexSet usable() const
    {
        IndexSet out;
        for (int j = 0; j < targets(); ++j) {
            if (status[static_cast<std::size_t>(j)].ok) {
                out.push_back(j);
            }
        }
        return out;
    }
};

/// n x k matrix of studentized influence values phi_j = -psi_j /
/// (sigma_j Gamma_j) for the usable targets listed in `targets`.
struct InfluenceMatrix {
    Matrix phi;
    IndexSet targets;
};

/// Sample for target j: treatment D_j, controls (D without column j, U).
inline Sample target_sample(const Vector& y, const Matrix& D, const Matrix& U, int j)
{
    require(j >= 0 && j < D.cols(), "target index out of range");
    require(D.rows() == y.size() && U.rows() == y.size(), "target design rows differ from response length");
    Matrix x(y.size(), D.cols() - 1 + U.cols());
    Eigen::Index col = 0;
    for (Eigen::Index k = 0; k < D.cols(); ++k) {
        if (k != j) {
            x.col(col++) = D.col(k);
        }
    }
    if (U.cols() > 0) {
        x.rightCols(U.cols()) = U;
    }
    return Sample(y, D.col(j), x);
}

/// Runs the fitter once per target column of D. Every target draws from
/// RngStream(config.seed, 0), the stream run_algorithm uses, so a single
/// target reproduces run_algorithm and reordering the targets only reorders
/// the output. Errors are recorded per target instead of thrown.
inline TargetEstimates fit_all_targets(const Vector& y, const Matrix& D, const Matrix& U, const OrthoConfig& config,
                                       int threads = 1, const TargetFitter& fitter = median_target_fit)
{
    require(D.cols() >= 1, "at least one target column is required");
    const auto p1 = static_cast<int>(D.cols());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    TargetEstimates est;
    est.n = static_cast<int>(y.size());
    est.alpha = Vector::Constant(p1, nan);
    est.sigma = Vector::Constant(p1, nan);
    est.gamma = Vector::Constant(p1, nan);
    est.status.resize(static_cast<std::size_t>(p1));
    est.results.resize(static_cast<std::size_t>(p1));
    est.psi = Matrix::Zero(y.size(), p1);

    parallel_for(static_cast<std::size_t>(p1), threads, [&](std::size_t k) {
        const int j = static_cast<int>(k);
        TargetStatus& st = est.status[k];
        try {
            const TargetFit fit = fitter(target_sample(y, D, U, j), config, RngStream(config.seed, 0));
            const InferenceResult& r = fit.result;
            if (r.variance.j_degenerate || !(r.sigma_hat > 0.0)) {
                throw Error(ErrorCode::InstrumentDegenerate, "target " + std::to_string(j) + ": degenerate J estimate");
            }
            est.alpha(j) = r.alpha_check;
            est.sigma(j) = r.sigma_hat;
            est.gamma(j) = -r.variance.j_hat;
            est.psi.col(j) = fit.psi;
            est.results[k] = r;
            st.ok = true;
        } catch (const std::exception& e) {
            st.ok = false;
            st.error = e.what();
        }
    });
    return est;
}

inline InfluenceMatrix influence_matrix(const TargetEstimates& est)
{
    InfluenceMatrix out;
    out.targets = est.usable();
    out.phi.resize(est.psi.rows(), static_cast<Eigen::Index>(out.targets.size()));
    for (std::size_t k = 0; k < out.targets.size(); ++k) {
        const int j = out.targets[k];
        out.phi.col(static_cast<Eigen::Index>(k)) = -est.psi.col(j) / (est.sigma(j) * est.gamma(j));
    }
    return out;
}

struct BootstrapResult {
    double c_hat = 0.0;
    double xi = 0.05;
    /// max_j |N*_j| for each draw.
    std::vector<double> draws;
};

/// B x k matrix of multiplier draws N*_j = n^{-1/2} sum_i e_i phi_ij with
/// e ~ N(0, I_n) shared across j within a draw. Draw b uses
/// RngStream(seed, b).
inline Matrix multiplier_draws(const Matrix& phi, int B, std::uint64_t seed, int threads = 1)
{
    require(B >= 1, "at least one bootstrap draw is required");
    const Eigen::Index n = phi.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    Matrix out(B, phi.cols());
    parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
        RngStream rng(seed, b);
        Vector e(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            e(i) = rng.normal();
        }
        out.row(static_cast<Eigen::Index>(b)) = (phi.transpose() * e).transpose() * scale;
    });
    return out;
}

/// Gaussian multiplier bootstrap of max_j |N*_j|; c_hat is its type-7
/// (1 - xi) quantile.
inline BootstrapResult multiplier_bootstrap(const Matrix& phi, int B, double xi, std::uint64_t seed, int threads = 1)
{
    require(B >= 200, "the multiplier bootstrap needs at least 200 draws");
    require(xi > 0.0 && xi < 1.0, "xi must lie in (0, 1)");
    const Matrix draws = multiplier_draws(phi, B, seed, threads);
    BootstrapResult out;
    out.xi = xi;
    out.draws.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        out.draws[static_cast<std::size_t>(b)] = draws.cols() ? draws.row(b).cwiseAbs().maxCoeff() : 0.0;
    }
    out.c_hat = quantile_type7(out.draws, 1.0 - xi);
    return out;
}

inline constexpr int kDefaultBootstrapDraws = 2000;

struct Band {
    int target = 0;
    bool ok = false;
    double alpha = 0.0;
    double sigma = 0.0;
    Interval interval;
};

/// alpha_j +/- multiplier sigma_j n^{-1/2} for every target; failed targets
/// come back with ok = false and NaN bounds.
inline std::vector<Band> bands_with_multiplier(const TargetEstimates& est, double multiplier)
{
    require(multiplier >= 0.0, "band multiplier must be non-negative");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double root_n = std::sqrt(static_cast<double>(est.n));
    std::vector<Band> out;
    for (int j = 0; j < est.targets(); ++j) {
        Band b;
        b.target = j;
        b.ok = est.status[static_cast<std::size_t>(j)].ok;
        b.alpha = est.alpha(j);
        b.sigma = est.sigma(j);
        if (b.ok) {
            const double half = multiplier * b.sigma / root_n;
            b.interval = {b.alpha - half, b.alpha + half};
        } else {
            b.interval = {nan, nan};
        }
        out.push_back(b);
    }
    return out;
}

inline std::vector<Band> simultaneous_bands(const TargetEstimates& est, double c_hat)
{
    return bands_with_multiplier(est, c_hat);
}

/// Per-target Wald intervals with multiplier Phi^{-1}(1 - xi / 2).
inline std::vector<Band> marginal_bands(const TargetEstimates& est, double xi)
{
    require(xi > 0.0 && xi < 1.0, "xi must lie in (0, 1)");
    return bands_with_multiplier(est, normal_quantile(1.0 - xi / 2.0));
}

} // namespace orthomed
