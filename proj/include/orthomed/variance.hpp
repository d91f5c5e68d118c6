#pragma once

#include <cmath>
#include <numbers>
#include <string_view>
#include <utility>

#include "orthomed/core_data.hpp"
#include "orthomed/normal.hpp"

namespace orthomed {

/// Components of the sandwich variance J^{-1} Omega J^{-1} together with
/// the homoscedastic efficiency-bound form 1 / (4 f^2 E v^2).
struct VarianceEstimate {
    double omega = 0.0;
    double j_hat = 0.0;
    double sigma2 = 0.0;
    double sigma2_homoscedastic = 0.0;
    double f_eps0 = 0.0;
    double bandwidth = 0.0;
    bool j_degenerate = false;
    bool zero_density = false;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return lo <= v && v <= hi; }
    double width() const { return hi - lo; }
};

inline constexpr double kDegenerateTolerance = 1e-10;
inline constexpr double kMinBandwidth = 1e-8;

/// Which regressor multiplies the instrument inside the Powell sum for J.
/// Treatment is the literal E(f d v); Instrument uses E(f v^2), equal to it
/// whenever E(v | x) = 0 and f depends on x only, and far less noisy when d
/// has a large mean.
enum class JacobianForm { Instrument, Treatment };

inline std::string_view to_string(JacobianForm f) { return f == JacobianForm::Instrument ? "instrument" : "treatment"; }

inline JacobianForm parse_jacobian_form(std::string_view s)
{
    if (s == "instrument") {
        return JacobianForm::Instrument;
    }
    if (s == "treatment") {
        return JacobianForm::Treatment;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown Jacobian form '" + std::string(s) + "'");
}

/// Hall-Sheather bandwidth constant at the median, linearized to the
/// residual scale: 2 (1.5)^{1/3} z^{2/3} phi(0)^{-1/3}, z = Phi^{-1}(0.975).
/// About 4.87.
inline double hall_sheather_constant()
{
    const double z = normal_quantile(0.975);
    const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return 2.0 * std::cbrt(1.5) * std::cbrt(z * z) / std::cbrt(phi0);
}

/// E_n(v^2) / 4.
inline double omega_hat(const Vector& vhat)
{
    require(vhat.size() > 0, "omega_hat of an empty vector");
    return mean_square(vhat) / 4.0;
}

/// h = c_h * sd(residuals) * n^{-1/3}, floored at 1e-8. sd uses the n - 1
/// divisor.
inline double powell_bandwidth(const Vector& residuals, double c_h = 1.0)
{
    const auto n = static_cast<double>(residuals.size());
    require(residuals.size() >= 10, "Powell bandwidth needs at least 10 residuals");
    const double mean = residuals.mean();
    const double sd = std::sqrt((residuals.array() - mean).square().sum() / (n - 1.0));
    return std::max(kMinBandwidth, c_h * sd * std::pow(n, -1.0 / 3.0));
}

/// Uniform-kernel estimate (2 h n)^{-1} sum 1{|e_i| <= h} d_i v_i of
/// J = E(f_eps(0) d v).
inline double powell_J(const Vector& residuals, const Vector& d, const Vector& vhat, double h)
{
    require(h > 0.0, "bandwidth must be positive");
    require(residuals.size() == d.size() && d.size() == vhat.size(), "powell_J inputs differ in length");
    double total = 0.0;
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        if (std::abs(residuals(i)) <= h) {
            total += d(i) * vhat(i);
        }
    }
    return total / (2.0 * h * static_cast<double>(residuals.size()));
}

/// (2 h n)^{-1} #{i : |e_i| <= h}.
inline double density_at_zero(const Vector& residuals, double h)
{
    require(h > 0.0, "bandwidth must be positive");
    const auto inside = (residuals.array().abs() <= h).count();
    return static_cast<double>(inside) / (2.0 * h * static_cast<double>(residuals.size()));
}

inline double sigma_robust(double omega, double j_hat)
{
    require(j_hat != 0.0, "sigma_robust needs a nonzero J");
    return std::sqrt(omega) / std::abs(j_hat);
}

inline double sigma_homoscedastic(double f_eps0, const Vector& vhat)
{
    const double ev2 = mean_square(vhat);
    require(f_eps0 > 0.0 && ev2 > 0.0, "sigma_homoscedastic needs positive density and instrument variance");
    return 1.0 / (2.0 * f_eps0 * std::sqrt(ev2));
}

/// alpha_check +/- sigma n^{-1/2} Phi^{-1}(1 - xi / 2).
inline Interval wald_ci(double alpha_check, double sigma, int n, double xi)
{
    require(sigma > 0.0, "Wald interval needs sigma > 0");
    require(xi > 0.0 && xi < 1.0, "xi must lie in (0, 1)");
    const double half = sigma / std::sqrt(static_cast<double>(n)) * normal_quantile(1.0 - xi / 2.0);
    return {alpha_check - half, alpha_check + half};
}

/// All variance pieces from final-stage residuals, treatment and instrument.
/// Degenerate J or density estimates are flagged; the matching sigma2 is
/// then left at 0.
inline VarianceEstimate estimate_variance(const Vector& residuals, const Vector& d, const Vector& vhat,
                                          double c_h = 1.0, JacobianForm form = JacobianForm::Treatment)
{
    VarianceEstimate v;
    v.bandwidth = powell_bandwidth(residuals, c_h);
    v.omega = omega_hat(vhat);
    v.j_hat = powell_J(residuals, form == JacobianForm::Treatment ? d : vhat, vhat, v.bandwidth);
    v.f_eps0 = density_at_zero(residuals, v.bandwidth);
    v.j_degenerate = std::abs(v.j_hat) < kDegenerateTolerance;
    v.zero_density = v.f_eps0 < kDegenerateTolerance;
    if (!v.j_degenerate) {
        const double s = sigma_robust(v.omega, v.j_hat);
        v.sigma2 = s * s;
    }
    if (!v.zero_density && mean_square(vhat) > 0.0) {
        const double s = sigma_homoscedastic(v.f_eps0, vhat);
        v.sigma2_homoscedastic = s * s;
    }
    return v;
}

} // namespace orthomed
