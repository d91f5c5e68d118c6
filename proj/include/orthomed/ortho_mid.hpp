#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orthomed/core_data.hpp"
#include "orthomed/lasso_het.hpp"
#include "orthomed/normal.hpp"
#include "orthomed/qr_l1.hpp"
#include "orthomed/variance.hpp"

namespace orthomed {

enum class Algorithm { Alg1, Alg2, Alg3, OneStep };

inline std::string_view to_string(Algorithm a)
{
    switch (a) {
    case Algorithm::Alg1: return "alg1";
    case Algorithm::Alg2: return "alg2";
    case Algorithm::Alg3: return "double";
    case Algorithm::OneStep: return "onestep";
    }
    return "alg1";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s)
{
    if (s == "alg1") return Algorithm::Alg1;
    if (s == "alg2") return Algorithm::Alg2;
    if (s == "double" || s == "alg3") return Algorithm::Alg3;
    if (s == "onestep") return Algorithm::OneStep;
    return std::nullopt;
}

/// Search set [lo, hi] for the instrumental median regression, with the
/// scale b = sqrt(E_n d^2) log n used to build it.
struct SearchInterval {
    double lo = 0.0;
    double hi = 0.0;
    double b = 1.0;

    double center() const { return 0.5 * (lo + hi); }
};

/// One piece of the piecewise-constant map alpha -> n L_n(alpha): either a
/// breakpoint (lo == hi) or the open segment between two breakpoints.
struct ScoreCell {
    double lo = 0.0;
    double hi = 0.0;
    double n_ln = 0.0;
};

struct ScoreMinimum {
    double alpha_check = 0.0;
    double ln_min = 0.0;
    std::vector<ScoreCell> cells;
};

struct ScoreRegion {
    std::vector<Interval> pieces;
    Interval hull;
    bool disconnected = false;
    bool empty = false;
    double threshold = 0.0;
    /// Minimizer of n L_n, reported in particular when the region is empty.
    double argmin = 0.0;
};

struct StageDiagnostics {
    IndexSet step1_support;
    double step1_lambda = 0.0;
    SolverStatus step1_status = SolverStatus::Optimal;
    IndexSet step2_support;
    double step2_lambda = 0.0;
    int loading_rounds = 0;
    IndexSet refit_support;
    std::vector<std::string> warnings;
};

struct InferenceResult {
    Algorithm algorithm = Algorithm::Alg1;
    int n = 0;
    double xi = 0.05;
    /// Center of the search interval (the Step (i) estimate of alpha).
    double alpha_initial = 0.0;
    double alpha_check = 0.0;
    /// Robust sandwich standard deviation; NaN when J is degenerate.
    double sigma_hat = std::numeric_limits<double>::quiet_NaN();
    /// Homoscedastic efficiency-bound form; NaN when the density estimate is degenerate.
    double sigma_hat_homoscedastic = std::numeric_limits<double>::quiet_NaN();
    VarianceEstimate variance;
    std::optional<Interval> wald_ci;
    SearchInterval search;
    ScoreRegion score_region;
    double n_ln_at_alpha_check = 0.0;
    std::vector<ScoreCell> score_trace;
    StageDiagnostics diagnostics;
};

struct OrthoConfig {
    Algorithm algorithm = Algorithm::Alg1;
    PivotalPenaltyOptions penalty;
    IteratedLassoOptions lasso;
    L1MedianOptions solver;
    double xi = 0.05;
    /// Half-width constant C in [alpha_hat +/- C / b].
    double interval_constant = 10.0;
    /// c_h in the Powell bandwidth.
    double bandwidth_constant = hall_sheather_constant();
    JacobianForm jacobian = JacobianForm::Instrument;
    /// Keep at most this many Step (i) coefficients.
    std::optional<int> truncate_to;
    std::uint64_t seed = 0;
};

/// vhat = d - x theta.
inline Vector build_instruments(const Sample& sample, const Vector& theta)
{
    require(theta.size() == sample.p(), "theta length differs from control count");
    Vector vhat = sample.d() - sample.x() * theta;
    if (mean_square(vhat) < 1e-12) {
        throw Error(ErrorCode::InstrumentDegenerate, "instrument has (near) zero empirical variance");
    }
    return vhat;
}

/// [alpha_hat - C / b, alpha_hat + C / b], b = sqrt(E_n d^2) log n.
inline SearchInterval param_interval(double alpha_hat, const Sample& sample, double constant = 10.0)
{
    require(sample.n() >= 3, "search interval needs n >= 3");
    const double b = std::sqrt(mean_square(sample.d())) * std::log(static_cast<double>(sample.n()));
    require(b > 0.0, "search interval needs a nonzero treatment");
    return {alpha_hat - constant / b, alpha_hat + constant / b, b};
}

/// L_n(alpha) = 4 |E_n[phi(y - gfit - d alpha) vhat]|^2 / E_n(vhat^2).
inline double score_statistic(double alpha, const Vector& y, const Vector& d, const Vector& gfit, const Vector& vhat)
{
    const double ev2 = mean_square(vhat);
    if (!(ev2 > 0.0)) {
        throw Error(ErrorCode::InstrumentDegenerate, "instrument has zero empirical variance");
    }
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        s += sign_score(y(i) - gfit(i) - d(i) * alpha) * vhat(i);
    }
    s /= static_cast<double>(y.size());
    return 4.0 * s * s / ev2;
}

/// Cells of n L_n over the interval: the endpoints, every breakpoint
/// (y_i - gfit_i) / d_i strictly inside, and the open segments between
/// consecutive points (evaluated at their midpoints).
inline std::vector<ScoreCell> score_cells(const Vector& y, const Vector& d, const Vector& gfit, const Vector& vhat,
                                          const SearchInterval& interval)
{
    require(interval.lo < interval.hi, "search interval must satisfy lo < hi");
    require(y.size() == d.size() && d.size() == gfit.size() && gfit.size() == vhat.size(),
            "score inputs differ in length");
    const double n = static_cast<double>(y.size());
    std::vector<double> points{interval.lo};
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (d(i) != 0.0) {
            const double bp = (y(i) - gfit(i)) / d(i);
            if (bp > interval.lo && bp < interval.hi) {
                points.push_back(bp);
            }
        }
    }
    points.push_back(interval.hi);
    std::sort(points.begin() + 1, points.end() - 1);
    points.erase(std::unique(points.begin(), points.end()), points.end());

    std::vector<ScoreCell> cells;
    cells.reserve(2 * points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
        cells.push_back({points[k], points[k], n * score_statistic(points[k], y, d, gfit, vhat)});
        if (k + 1 < points.size()) {
            const double mid = 0.5 * (points[k] + points[k + 1]);
            cells.push_back({points[k], points[k + 1], n * score_statistic(mid, y, d, gfit, vhat)});
        }
    }
    return cells;
}

/// Exact minimizer of the step function L_n over the interval. Among
/// connected minimizing plateaus the midpoint closest to the interval
/// center wins (first one on exact ties).
inline ScoreMinimum minimize_score(const Vector& y, const Vector& d, const Vector& gfit, const Vector& vhat,
                                   const SearchInterval& interval)
{
    ScoreMinimum out;
    out.cells = score_cells(y, d, gfit, vhat, interval);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : out.cells) {
        best = std::min(best, c.n_ln);
    }
    const double center = interval.center();
    double best_distance = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.cells.size();) {
        if (out.cells[k].n_ln != best) {
            ++k;
            continue;
        }
        std::size_t end = k;
        while (end + 1 < out.cells.size() && out.cells[end + 1].n_ln == best) {
            ++end;
        }
        const double mid = 0.5 * (out.cells[k].lo + out.cells[end].hi);
        if (std::abs(mid - center) < best_distance) {
            best_distance = std::abs(mid - center);
            out.alpha_check = mid;
        }
        k = end + 1;
    }
    out.ln_min = best / static_cast<double>(y.size());
    return out;
}

/// {alpha : n L_n(alpha) <= threshold} from precomputed cells.
inline ScoreRegion score_region_from_cells(const std::vector<ScoreCell>& cells, double threshold, double argmin)
{
    ScoreRegion region;
    region.threshold = threshold;
    region.argmin = argmin;
    for (std::size_t k = 0; k < cells.size();) {
        if (cells[k].n_ln > threshold) {
            ++k;
            continue;
        }
        std::size_t end = k;
        while (end + 1 < cells.size() && cells[end + 1].n_ln <= threshold) {
            ++end;
        }
        region.pieces.push_back({cells[k].lo, cells[end].hi});
        k = end + 1;
    }
    region.empty = region.pieces.empty();
    if (!region.empty) {
        region.hull = {region.pieces.front().lo, region.pieces.back().hi};
        region.disconnected = region.pieces.size() > 1;
    } else {
        region.hull = {argmin, argmin};
    }
    return region;
}

/// Score-inverted confidence region at level 1 - xi, threshold the
/// (1 - xi)-quantile of chi-square(1).
inline ScoreRegion score_region(const Vector& y, const Vector& d, const Vector& gfit, const Vector& vhat,
                                const SearchInterval& interval, double xi)
{
    require(xi > 0.0 && xi < 1.0, "xi must lie in (0, 1)");
    const ScoreMinimum m = minimize_score(y, d, gfit, vhat, interval);
    return score_region_from_cells(m.cells, chi2_1_quantile_upper(xi), m.alpha_check);
}

/// alpha_hat + [E_n{f v^2}]^{-1} E_n{phi(y - d alpha_hat - gfit) v}.
inline double one_step(double alpha_hat, const Vector& y, const Vector& d, const Vector& gfit, const Vector& vhat,
                       double f_eps0)
{
    require(f_eps0 > 0.0, "one-step update needs a positive density estimate");
    const double ev2 = mean_square(vhat);
    require(ev2 > 0.0, "one-step update needs a non-degenerate instrument");
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        s += sign_score(y(i) - d(i) * alpha_hat - gfit(i)) * vhat(i);
    }
    s /= static_cast<double>(y.size());
    return alpha_hat + s / (f_eps0 * ev2);
}

// ---------------------------------------------------------------------------
// Staged pipeline

namespace detail {

template <typename F>
auto staged(const char* label, F&& f)
{
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.code(), std::string(label) + ": " + e.what());
    }
}

} // namespace detail

/// Step (i): l1-penalized median regression of y on (d, x) and its
/// post-selection refit on the selected controls.
struct FirstStage {
    LadFit penalized;
    LadFit refit;
    PenaltyWeights weights;
};

inline PenaltyWeights step1_weights(const Sample& sample, const OrthoConfig& config)
{
    PenaltyWeights w = column_loadings(sample);
    if (!config.penalty.penalize_intercept) {
        for (int j = 0; j < sample.p(); ++j) {
            if (is_intercept_column(sample, j)) {
                w.psi(j + 1) = 0.0;
            }
        }
    }
    return w;
}

inline FirstStage first_stage(const Sample& sample, const OrthoConfig& config, RngStream& rng)
{
    return detail::staged("step (i)", [&] {
        FirstStage out;
        out.weights = step1_weights(sample, config);
        const double lambda = pivotal_penalty_median(sample, config.penalty, rng);
        out.penalized = solve_l1_median(sample, lambda, out.weights, config.solver);
        if (config.truncate_to) {
            out.penalized = truncate_coefficients(out.penalized, *config.truncate_to, sample, out.weights);
        }
        out.refit = lad_refit(sample, out.penalized.support, true, config.solver);
        return out;
    });
}

/// Step (ii): heteroscedastic lasso of d on x and its post-lasso refit.
struct SecondStage {
    LassoFit lasso;
    Vector theta_post;
    std::vector<std::string> warnings;
};

inline SecondStage second_stage(const Sample& sample, const OrthoConfig& config)
{
    return detail::staged("step (ii)", [&] {
        SecondStage out;
        out.lasso = iterated_lasso(sample, config.lasso);
        out.theta_post = post_lasso(sample, out.lasso.support, &out.warnings);
        return out;
    });
}

/// Step (iii) plus inference given the fitted confounding function gfit,
/// the instrument, and the search-interval center. When `alpha_override`
/// is set it replaces the score minimizer as the reported estimate.
inline InferenceResult instrumental_step(const Sample& sample, const Vector& gfit, const Vector& vhat,
                                         double alpha_center, const OrthoConfig& config,
                                         std::optional<double> alpha_override = std::nullopt)
{
    return detail::staged("step (iii)", [&] {
        InferenceResult r;
        r.algorithm = config.algorithm;
        r.n = sample.n();
        r.xi = config.xi;
        r.alpha_initial = alpha_center;
        r.search = param_interval(alpha_center, sample, config.interval_constant);
        const ScoreMinimum m = minimize_score(sample.y(), sample.d(), gfit, vhat, r.search);
        r.alpha_check = alpha_override.value_or(m.alpha_check);
        r.n_ln_at_alpha_check = sample.n() * score_statistic(r.alpha_check, sample.y(), sample.d(), gfit, vhat);
        r.score_region = score_region_from_cells(m.cells, chi2_1_quantile_upper(config.xi), m.alpha_check);
        r.score_trace = m.cells;

        const Vector resid = sample.y() - sample.d() * r.alpha_check - gfit;
        r.variance = estimate_variance(resid, sample.d(), vhat, config.bandwidth_constant, config.jacobian);
        if (!r.variance.j_degenerate) {
            r.sigma_hat = std::sqrt(r.variance.sigma2);
            r.wald_ci = wald_ci(r.alpha_check, r.sigma_hat, sample.n(), config.xi);
        }
        if (!r.variance.zero_density) {
            r.sigma_hat_homoscedastic = std::sqrt(r.variance.sigma2_homoscedastic);
        }
        return r;
    });
}

inline void record_diagnostics(InferenceResult& r, const FirstStage& s1, const SecondStage& s2)
{
    r.diagnostics.step1_support = s1.penalized.support;
    r.diagnostics.step1_lambda = s1.penalized.lambda;
    r.diagnostics.step1_status = s1.penalized.solver_status;
    r.diagnostics.refit_support = s1.refit.support;
    r.diagnostics.step2_support = s2.lasso.support;
    r.diagnostics.step2_lambda = s2.lasso.lambda;
    r.diagnostics.loading_rounds = s2.lasso.iterations_of_loadings;
    r.diagnostics.warnings = s1.refit.warnings;
    r.diagnostics.warnings.insert(r.diagnostics.warnings.end(), s2.warnings.begin(), s2.warnings.end());
}

/// Nuisance estimates entering Step (iii): x'beta and the instrument.
struct Nuisance {
    Vector gfit;
    Vector vhat;
};

/// Post-selection nuisances of Algorithm 1.
inline Nuisance alg1_nuisance(const Sample& sample, const FirstStage& s1, const SecondStage& s2)
{
    return {sample.x() * s1.refit.beta,
            detail::staged("step (ii)", [&] { return build_instruments(sample, s2.theta_post); })};
}

/// Algorithm 1 (post-selection fits) from precomputed stages.
inline InferenceResult run_alg1(const Sample& sample, const FirstStage& s1, const SecondStage& s2,
                                const OrthoConfig& config)
{
    const auto [gfit, vhat] = alg1_nuisance(sample, s1, s2);
    InferenceResult r = instrumental_step(sample, gfit, vhat, s1.refit.alpha, config);
    r.algorithm = Algorithm::Alg1;
    record_diagnostics(r, s1, s2);
    return r;
}

/// Algorithm 2 (regularized fits) from precomputed stages.
inline InferenceResult run_alg2(const Sample& sample, const FirstStage& s1, const SecondStage& s2,
                                const OrthoConfig& config)
{
    const Vector gfit = sample.x() * s1.penalized.beta;
    const Vector vhat = detail::staged("step (ii)", [&] { return build_instruments(sample, s2.lasso.theta); });
    InferenceResult r = instrumental_step(sample, gfit, vhat, s1.penalized.alpha, config);
    r.algorithm = Algorithm::Alg2;
    record_diagnostics(r, s1, s2);
    return r;
}

/// One-step update from the penalized Step (i) estimate, density taken at
/// the Step (i) residuals.
inline InferenceResult run_one_step(const Sample& sample, const FirstStage& s1, const SecondStage& s2,
                                    const OrthoConfig& config)
{
    const Vector gfit = sample.x() * s1.penalized.beta;
    const Vector vhat = detail::staged("step (ii)", [&] { return build_instruments(sample, s2.lasso.theta); });
    const double alpha_hat = s1.penalized.alpha;
    const double updated = detail::staged("step (iii)", [&] {
        const Vector resid = sample.y() - sample.d() * alpha_hat - gfit;
        const double f = density_at_zero(resid, powell_bandwidth(resid, config.bandwidth_constant));
        if (f < kDegenerateTolerance) {
            throw Error(ErrorCode::InvalidArgument, "zero density estimate at the Step (i) residuals");
        }
        return one_step(alpha_hat, sample.y(), sample.d(), gfit, vhat, f);
    });
    InferenceResult r = instrumental_step(sample, gfit, vhat, alpha_hat, config, updated);
    r.algorithm = Algorithm::OneStep;
    record_diagnostics(r, s1, s2);
    return r;
}

/// Post-double selection: median regression of y on d and the union of
/// the Step (i) and Step (ii) supports.
inline InferenceResult run_double_selection(const Sample& sample, const FirstStage& s1, const SecondStage& s2,
                                            const OrthoConfig& config)
{
    const IndexSet joint = set_union(s1.penalized.support, s2.lasso.support);
    if (2 * (static_cast<int>(joint.size()) + 1) >= sample.n()) {
        throw Error(ErrorCode::UnionTooLarge, "step (iii): union of selected controls has " +
                                                  std::to_string(joint.size()) + " columns for n = " +
                                                  std::to_string(sample.n()));
    }
    const LadFit fit = detail::staged("step (iii)", [&] { return lad_refit(sample, joint, true, config.solver); });
    const Vector gfit = sample.x() * fit.beta;
    const Vector vhat = detail::staged("step (ii)", [&] { return build_instruments(sample, s2.theta_post); });
    InferenceResult r = instrumental_step(sample, gfit, vhat, fit.alpha, config, fit.alpha);
    r.algorithm = Algorithm::Alg3;
    record_diagnostics(r, s1, s2);
    r.diagnostics.refit_support = fit.support;
    r.diagnostics.warnings.insert(r.diagnostics.warnings.end(), fit.warnings.begin(), fit.warnings.end());
    return r;
}

inline InferenceResult double_selection(const Sample& sample, const OrthoConfig& config, RngStream rng)
{
    const FirstStage s1 = first_stage(sample, config, rng);
    const SecondStage s2 = second_stage(sample, config);
    return run_double_selection(sample, s1, s2, config);
}

/// Runs Steps (i)-(iii) of the configured algorithm. The pivotal penalty
/// simulation draws from `rng`.
inline InferenceResult run_algorithm(const Sample& sample, const OrthoConfig& config, RngStream rng)
{
    const FirstStage s1 = first_stage(sample, config, rng);
    const SecondStage s2 = second_stage(sample, config);
    switch (config.algorithm) {
    case Algorithm::Alg1: return run_alg1(sample, s1, s2, config);
    case Algorithm::Alg2: return run_alg2(sample, s1, s2, config);
    case Algorithm::Alg3: return run_double_selection(sample, s1, s2, config);
    case Algorithm::OneStep: return run_one_step(sample, s1, s2, config);
    }
    return run_alg1(sample, s1, s2, config);
}

inline InferenceResult run_algorithm(const Sample& sample, const OrthoConfig& config)
{
    return run_algorithm(sample, config, RngStream(config.seed, 0));
}

} // namespace orthomed
