#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "orthomed/core_data.hpp"
#include "orthomed/multi_z.hpp"
#include "orthomed/normal.hpp"
#include "orthomed/ortho_mid.hpp"
#include "orthomed/parallel.hpp"

namespace orthomed {

enum class ThetaProfile { ExactSparse10, PolyDecayAll };

inline std::string_view to_string(ThetaProfile p)
{
    return p == ThetaProfile::ExactSparse10 ? "exact10" : "polydecay";
}

/// Monte Carlo design
///   y = d alpha0 + x^T (c_y theta0) + eps,  d = x^T (c_d theta0) + v,
/// x = (1, z^T)^T, z ~ N(0, Sigma), Sigma_ij = rho^|i-j|, eps, v ~ N(0, 1).
/// `p` counts the columns of x including the intercept.
struct DesignSpec {
    int n = 250;
    int p = 300;
    double rho = 0.5;
    double r2y = 0.5;
    double r2d = 0.5;
    double alpha0 = 0.5;
    ThetaProfile theta_profile = ThetaProfile::ExactSparse10;
    std::uint64_t seed = 0;
};

inline void validate(const DesignSpec& d)
{
    require(d.n >= 10, "design needs n >= 10");
    require(d.p >= 2, "design needs p >= 2 (intercept plus one covariate)");
    require(d.rho > -1.0 && d.rho < 1.0, "rho must lie in (-1, 1)");
    require(d.r2y >= 0.0 && d.r2y < 1.0 && d.r2d >= 0.0 && d.r2d < 1.0, "R^2 targets must lie in [0, 1)");
}

/// Sigma_ij = rho^|i-j|.
inline Matrix toeplitz_covariance(int k, double rho)
{
    Matrix s(k, k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            s(i, j) = std::pow(rho, std::abs(i - j));
        }
    }
    return s;
}

/// c with c^2 q / (c^2 q + 1) = r2, q = theta^T Sigma theta.
inline double scale_for_r2(const Vector& theta_tail, const Matrix& sigma, double r2)
{
    require(r2 >= 0.0 && r2 < 1.0, "R^2 target must lie in [0, 1)");
    if (r2 == 0.0) {
        return 0.0;
    }
    const double q = theta_tail.dot(sigma * theta_tail);
    require(q > 0.0, "signal variance must be positive for a nonzero R^2");
    return std::sqrt(r2 / ((1.0 - r2) * q));
}

/// theta0_j = 1 / j^2 over the columns of x (j = 1 is the intercept),
/// truncated after j = 10 for ExactSparse10.
inline Vector design_theta(int p, ThetaProfile profile)
{
    Vector theta = Vector::Zero(p);
    const int last = profile == ThetaProfile::ExactSparse10 ? std::min(p, 10) : p;
    for (int j = 1; j <= last; ++j) {
        theta(j - 1) = 1.0 / (static_cast<double>(j) * j);
    }
    return theta;
}

/// Per-design quantities shared by all replications.
struct PreparedDesign {
    DesignSpec spec;
    Matrix chol_lower; // Sigma = L L^T over the p - 1 covariates
    Vector theta;
    double c_y = 0.0;
    double c_d = 0.0;
};

inline PreparedDesign prepare(const DesignSpec& spec)
{
    validate(spec);
    PreparedDesign out;
    out.spec = spec;
    const Matrix sigma = toeplitz_covariance(spec.p - 1, spec.rho);
    Eigen::LLT<Matrix> llt(sigma);
    require(llt.info() == Eigen::Success, "Toeplitz covariance is not positive definite");
    out.chol_lower = llt.matrixL();
    out.theta = design_theta(spec.p, spec.theta_profile);
    const Vector tail = out.theta.tail(spec.p - 1);
    out.c_y = scale_for_r2(tail, sigma, spec.r2y);
    out.c_d = scale_for_r2(tail, sigma, spec.r2d);
    return out;
}

inline Sample generate(const PreparedDesign& design, RngStream& rng)
{
    const auto& spec = design.spec;
    const int n = spec.n;
    const int k = spec.p - 1;
    Matrix g(n, k);
    for (int j = 0; j < k; ++j) {
        for (int i = 0; i < n; ++i) {
            g(i, j) = rng.normal();
        }
    }
    Matrix x(n, spec.p);
    x.col(0).setOnes();
    x.rightCols(k) = g * design.chol_lower.transpose();
    Vector eps(n);
    Vector v(n);
    for (int i = 0; i < n; ++i) {
        eps(i) = rng.normal();
    }
    for (int i = 0; i < n; ++i) {
        v(i) = rng.normal();
    }
    const Vector xt = x * design.theta;
    Vector d = design.c_d * xt + v;
    Vector y = spec.alpha0 * d + design.c_y * xt + eps;
    return Sample(std::move(y), std::move(d), std::move(x));
}

inline Sample generate(const DesignSpec& spec, RngStream& rng) { return generate(prepare(spec), rng); }

// ---------------------------------------------------------------------------
// Replications

enum class Method { NaivePost, OrthoAlg1, OrthoAlg2, DoubleSel, ScoreTest };

inline std::string_view to_string(Method m)
{
    switch (m) {
    case Method::NaivePost: return "naive_post";
    case Method::OrthoAlg1: return "ortho_alg1";
    case Method::OrthoAlg2: return "ortho_alg2";
    case Method::DoubleSel: return "double_sel";
    case Method::ScoreTest: return "score_test";
    }
    return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s)
{
    for (Method m : {Method::NaivePost, Method::OrthoAlg1, Method::OrthoAlg2, Method::DoubleSel, Method::ScoreTest}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    return std::nullopt;
}

inline const std::vector<Method>& default_methods()
{
    static const std::vector<Method> all{Method::NaivePost, Method::OrthoAlg1, Method::OrthoAlg2, Method::ScoreTest};
    return all;
}

struct ReplicationOutcome {
    Method method = Method::OrthoAlg1;
    bool ok = false;
    std::string error;
    double alpha_est = std::numeric_limits<double>::quiet_NaN();
    double sigma_est = std::numeric_limits<double>::quiet_NaN();
    /// |alpha - alpha0| sqrt(n) / sigma for Wald methods, n L_n(alpha0) for the score test.
    double statistic = std::numeric_limits<double>::quiet_NaN();
    bool reject05 = false;
    bool covered95 = false;
};

/// Post-selection median regression treated as if the selected model were
/// fixed: sigma^2 = [(E_n w w^T)^{-1}]_{dd} / (4 f^2), w = (d, x_support),
/// f from the uniform-kernel density of the refit residuals.
inline double naive_post_sigma(const Sample& sample, const LadFit& refit, double bandwidth_constant = 1.0)
{
    const Vector resid = sample.y() - sample.d() * refit.alpha - sample.x() * refit.beta;
    const double f = density_at_zero(resid, powell_bandwidth(resid, bandwidth_constant));
    require(f >= kDegenerateTolerance, "naive variance: zero density estimate");
    Matrix w(sample.n(), static_cast<Eigen::Index>(refit.support.size()) + 1);
    w.col(0) = sample.d();
    for (std::size_t k = 0; k < refit.support.size(); ++k) {
        w.col(static_cast<Eigen::Index>(k) + 1) = sample.x().col(refit.support[k]);
    }
    const Matrix gram = w.transpose() * w / static_cast<double>(sample.n());
    const Matrix inv = gram.completeOrthogonalDecomposition().pseudoInverse();
    require(inv(0, 0) > 0.0, "naive variance: singular selected design");
    return std::sqrt(inv(0, 0)) / (2.0 * f);
}

namespace detail {

inline void fill_wald(ReplicationOutcome& o, double alpha, double sigma, double alpha0, int n)
{
    o.alpha_est = alpha;
    o.sigma_est = sigma;
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        o.ok = false;
        o.error = "undefined standard error";
        return;
    }
    o.statistic = std::abs(alpha - alpha0) * std::sqrt(static_cast<double>(n)) / sigma;
    o.reject05 = o.statistic > normal_quantile(0.975);
    o.covered95 = !o.reject05;
    o.ok = true;
}

} // namespace detail

/// One replication: a pure function of (design, rep index, design seed).
inline std::vector<ReplicationOutcome> replicate(const PreparedDesign& design, std::uint64_t rep,
                                                 const std::vector<Method>& methods, const OrthoConfig& config)
{
    std::vector<ReplicationOutcome> out(methods.size());
    for (std::size_t k = 0; k < methods.size(); ++k) {
        out[k].method = methods[k];
    }
    const RngStream root(design.spec.seed, rep);
    RngStream data_rng = root.substream(0);
    RngStream penalty_rng = root.substream(1);
    const double alpha0 = design.spec.alpha0;

    auto fail_all = [&](const std::string& why) {
        for (auto& o : out) {
            o.ok = false;
            o.error = why;
        }
    };

    try {
        const Sample sample = generate(design, data_rng);
        const FirstStage s1 = first_stage(sample, config, penalty_rng);
        const SecondStage s2 = second_stage(sample, config);
        std::optional<InferenceResult> alg1;
        for (auto& o : out) {
            try {
                switch (o.method) {
                case Method::NaivePost:
                    detail::fill_wald(o, s1.refit.alpha, naive_post_sigma(sample, s1.refit, config.bandwidth_constant),
                                      alpha0, sample.n());
                    break;
                case Method::OrthoAlg1:
                case Method::ScoreTest:
                    if (!alg1) {
                        alg1 = run_alg1(sample, s1, s2, config);
                    }
                    if (o.method == Method::OrthoAlg1) {
                        detail::fill_wald(o, alg1->alpha_check, alg1->sigma_hat, alpha0, sample.n());
                    } else {
                        const auto [gfit, vhat] = alg1_nuisance(sample, s1, s2);
                        o.alpha_est = alg1->alpha_check;
                        o.sigma_est = alg1->sigma_hat;
                        o.statistic = sample.n() * score_statistic(alpha0, sample.y(), sample.d(), gfit, vhat);
                        o.reject05 = o.statistic > chi2_1_quantile_upper(0.05);
                        o.covered95 = !o.reject05;
                        o.ok = true;
                    }
                    break;
                case Method::OrthoAlg2: {
                    const InferenceResult r = run_alg2(sample, s1, s2, config);
                    detail::fill_wald(o, r.alpha_check, r.sigma_hat, alpha0, sample.n());
                    break;
                }
                case Method::DoubleSel: {
                    const InferenceResult r = run_double_selection(sample, s1, s2, config);
                    detail::fill_wald(o, r.alpha_check, r.sigma_hat, alpha0, sample.n());
                    break;
                }
                }
            } catch (const std::exception& e) {
                o.ok = false;
                o.error = e.what();
            }
        }
    } catch (const std::exception& e) {
        fail_all(e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct Metrics {
    int reps = 0;
    int failures = 0;
    double rejection_rate = std::numeric_limits<double>::quiet_NaN();
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double mean_bias = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double rmse = std::numeric_limits<double>::quiet_NaN();
};

/// Bias, SD (divisor N) and RMSE of the estimates about `truth`, plus
/// rejection and coverage rates over the successful replications.
inline Metrics summarize(const std::vector<ReplicationOutcome>& outcomes, double truth)
{
    Metrics m;
    std::vector<double> est;
    int rejected = 0;
    int covered = 0;
    for (const auto& o : outcomes) {
        if (!o.ok) {
            ++m.failures;
            continue;
        }
        est.push_back(o.alpha_est);
        rejected += o.reject05 ? 1 : 0;
        covered += o.covered95 ? 1 : 0;
    }
    m.reps = static_cast<int>(est.size());
    if (est.empty()) {
        return m;
    }
    const double count = static_cast<double>(est.size());
    double mean = 0.0;
    for (double e : est) {
        mean += e;
    }
    mean /= count;
    double var = 0.0;
    double mse = 0.0;
    for (double e : est) {
        var += (e - mean) * (e - mean);
        mse += (e - truth) * (e - truth);
    }
    m.mean_bias = mean - truth;
    m.sd = std::sqrt(var / count);
    m.rmse = std::sqrt(mse / count);
    m.rejection_rate = rejected / count;
    m.coverage = covered / count;
    return m;
}

struct GridRow {
    DesignSpec design;
    Method method = Method::OrthoAlg1;
    Metrics metrics;
};

struct DesignRun {
    DesignSpec design;
    /// outcomes[rep][k] is method k of replication rep.
    std::vector<std::vector<ReplicationOutcome>> outcomes;

    std::vector<ReplicationOutcome> of(Method m) const
    {
        std::vector<ReplicationOutcome> out;
        for (const auto& rep : outcomes) {
            for (const auto& o : rep) {
                if (o.method == m) {
                    out.push_back(o);
                }
            }
        }
        return out;
    }
};

struct GridResult {
    std::vector<Method> methods;
    int reps = 0;
    std::vector<DesignRun> runs;
    std::vector<GridRow> rows;
};

/// Runs `reps` replications of every design and method. Replications are
/// distributed over `threads` workers; every table entry is independent of
/// the thread count.
inline GridResult run_grid(const std::vector<DesignSpec>& designs, int reps, const std::vector<Method>& methods,
                           int threads, const OrthoConfig& config = {})
{
    require(reps >= 1, "run_grid needs reps >= 1");
    require(!methods.empty(), "run_grid needs at least one method");
    GridResult result;
    result.methods = methods;
    result.reps = reps;
    std::vector<PreparedDesign> prepared;
    for (const auto& d : designs) {
        prepared.push_back(prepare(d));
        result.runs.push_back({d, std::vector<std::vector<ReplicationOutcome>>(static_cast<std::size_t>(reps))});
    }
    const std::size_t per = static_cast<std::size_t>(reps);
    parallel_for(designs.size() * per, threads, [&](std::size_t task) {
        const std::size_t di = task / per;
        const std::size_t rep = task % per;
        result.runs[di].outcomes[rep] = replicate(prepared[di], rep, methods, config);
    });
    for (const auto& run : result.runs) {
        for (Method m : methods) {
            result.rows.push_back({run.design, m, summarize(run.of(m), run.design.alpha0)});
        }
    }
    return result;
}

/// {0, 0.3, 0.5, 0.7, 0.9} by default; {0, 0.1, ..., 0.9} for the full grid.
inline std::vector<double> default_r2_levels(bool full)
{
    if (full) {
        return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    }
    return {0.0, 0.3, 0.5, 0.7, 0.9};
}

inline std::vector<DesignSpec> grid_designs(const DesignSpec& base, const std::vector<double>& levels)
{
    std::vector<DesignSpec> out;
    for (double ry : levels) {
        for (double rd : levels) {
            DesignSpec d = base;
            d.r2y = ry;
            d.r2d = rd;
            out.push_back(d);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Many-target design

/// y = D alpha + U (c_y theta0) + eps with D_j = loading z_j + v_j,
/// U = (1, z^T)^T, z ~ N(0, Sigma) over pu - 1 covariates, eps, v ~ N(0, 1).
/// alpha_j = 0.5 for the first `nonzero` targets and 0 otherwise.
struct MultiTargetSpec {
    int n = 300;
    int p1 = 20;
    int pu = 30;
    double rho = 0.5;
    double r2y = 0.5;
    double loading = 0.5;
    int nonzero = 5;
    std::uint64_t seed = 0;
};

struct MultiTargetSample {
    Vector y;
    Matrix D;
    Matrix U;
    Vector alpha;
};

inline MultiTargetSample generate_multi(const MultiTargetSpec& spec, RngStream& rng)
{
    require(spec.p1 >= 1 && spec.pu - 1 >= spec.p1, "many-target design needs pu - 1 >= p1 >= 1");
    require(spec.n >= 10, "design needs n >= 10");
    const int k = spec.pu - 1;
    const Matrix sigma = toeplitz_covariance(k, spec.rho);
    const Matrix chol = Eigen::LLT<Matrix>(sigma).matrixL();
    const Vector theta = design_theta(spec.pu, ThetaProfile::ExactSparse10);
    const double c_y = scale_for_r2(theta.tail(k), sigma, spec.r2y);

    Matrix g(spec.n, k);
    for (int j = 0; j < k; ++j) {
        for (int i = 0; i < spec.n; ++i) {
            g(i, j) = rng.normal();
        }
    }
    MultiTargetSample out;
    out.U.resize(spec.n, spec.pu);
    out.U.col(0).setOnes();
    out.U.rightCols(k) = g * chol.transpose();
    out.D.resize(spec.n, spec.p1);
    for (int j = 0; j < spec.p1; ++j) {
        for (int i = 0; i < spec.n; ++i) {
            out.D(i, j) = spec.loading * out.U(i, j + 1) + rng.normal();
        }
    }
    out.alpha = Vector::Zero(spec.p1);
    out.alpha.head(std::min(spec.nonzero, spec.p1)).setConstant(0.5);
    Vector eps(spec.n);
    for (int i = 0; i < spec.n; ++i) {
        eps(i) = rng.normal();
    }
    out.y = out.D * out.alpha + c_y * (out.U * theta) + eps;
    return out;
}

/// Seed for the multiplier bootstrap, kept apart from the per-target
/// streams that share the base seed.
inline std::uint64_t bootstrap_seed(std::uint64_t seed) { return detail::splitmix64(seed ^ 0xB007B007B007B007ULL); }

struct BandReplication {
    bool ok = false;
    std::string error;
    int usable = 0;
    double c_hat = 0.0;
    bool covered_all = false;
};

/// One replication: fit all targets, bootstrap c_hat, and check whether
/// every simultaneous band covers its true coefficient. A replication in
/// which any target fails counts as not ok.
inline BandReplication band_replication(const MultiTargetSpec& spec, std::uint64_t rep, const OrthoConfig& base,
                                        int draws, double xi)
{
    BandReplication out;
    RngStream root(spec.seed, rep);
    RngStream data = root.substream(0);
    const MultiTargetSample s = generate_multi(spec, data);
    OrthoConfig config = base;
    config.seed = detail::splitmix64(root.substream(1).engine()());
    const TargetEstimates est = fit_all_targets(s.y, s.D, s.U, config);
    out.usable = static_cast<int>(est.usable().size());
    if (out.usable != spec.p1) {
        for (const auto& st : est.status) {
            if (!st.ok) {
                out.error = st.error;
                break;
            }
        }
        return out;
    }
    const InfluenceMatrix inf = influence_matrix(est);
    const BootstrapResult boot = multiplier_bootstrap(inf.phi, draws, xi, bootstrap_seed(config.seed));
    out.c_hat = boot.c_hat;
    out.covered_all = true;
    for (const Band& b : simultaneous_bands(est, boot.c_hat)) {
        out.covered_all = out.covered_all && b.interval.contains(s.alpha(b.target));
    }
    out.ok = true;
    return out;
}

} // namespace orthomed
