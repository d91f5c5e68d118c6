#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "orthomed/core_data.hpp"
#include "orthomed/error.hpp"

namespace orthomed {

enum class SolverStatus { Optimal, IterationLimit };

struct LadLpOptions {
    double relative_gap = 1e-8;
    int max_iterations = 200;
    /// Fraction of the distance to the boundary taken per step.
    double step_fraction = 0.99995;
};

struct LadLpResult {
    Vector coef;
    SolverStatus status = SolverStatus::Optimal;
    int iterations = 0;
    /// Duality gap in units of sum |residual| + sum pen_j |coef_j|.
    double gap = 0.0;
    /// Primal objective sum |residual| + sum pen_j |coef_j| at coef.
    double objective = 0.0;
};

namespace detail {

// Largest step t <= 1e20 with v + t*dv >= 0.
inline double boundary_step(const Vector& v, const Vector& dv)
{
    double step = 1e20;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (dv(i) < 0.0) {
            step = std::min(step, -v(i) / dv(i));
        }
    }
    return step;
}

// Rows of the LP: the n data rows followed by one pseudo-row per penalized
// coefficient (response 0, design pen_j * e_j). Products with the
// constraint matrix A = X_aug^T are formed without materializing X_aug.
class AugmentedDesign {
public:
    AugmentedDesign(const Matrix& x, const Vector& pen) : x_(x)
    {
        for (Eigen::Index j = 0; j < pen.size(); ++j) {
            if (pen(j) > 0.0) {
                idx_.push_back(static_cast<int>(j));
            }
        }
        pen_.resize(static_cast<Eigen::Index>(idx_.size()));
        for (std::size_t k = 0; k < idx_.size(); ++k) {
            pen_(static_cast<Eigen::Index>(k)) = pen(idx_[k]);
        }
    }

    Eigen::Index rows() const { return x_.rows() + pen_.size(); }
    Eigen::Index cols() const { return x_.cols(); }

    // A v
    Vector apply(const Vector& v) const
    {
        const Eigen::Index n = x_.rows();
        Vector out = x_.transpose() * v.head(n);
        for (Eigen::Index k = 0; k < pen_.size(); ++k) {
            out(idx_[k]) += pen_(k) * v(n + k);
        }
        return out;
    }

    // A^T u
    Vector apply_transpose(const Vector& u) const
    {
        const Eigen::Index n = x_.rows();
        Vector out(rows());
        out.head(n) = x_ * u;
        for (Eigen::Index k = 0; k < pen_.size(); ++k) {
            out(n + k) = pen_(k) * u(idx_[k]);
        }
        return out;
    }

    // A diag(q) A^T, lower triangle only.
    void weighted_gram(const Vector& q, Matrix& out) const
    {
        const Eigen::Index n = x_.rows();
        scaled_ = x_.array().colwise() * q.head(n).array().sqrt();
        out.setZero(cols(), cols());
        out.selfadjointView<Eigen::Lower>().rankUpdate(scaled_.transpose());
        for (Eigen::Index k = 0; k < pen_.size(); ++k) {
            out(idx_[k], idx_[k]) += pen_(k) * pen_(k) * q(n + k);
        }
    }

    double objective(const Vector& y, const Vector& coef) const
    {
        double total = (y - x_ * coef).lpNorm<1>();
        for (Eigen::Index k = 0; k < pen_.size(); ++k) {
            total += pen_(k) * std::abs(coef(idx_[k]));
        }
        return total;
    }

private:
    const Matrix& x_;
    std::vector<int> idx_;
    Vector pen_;
    mutable Matrix scaled_;
};

class GramSolver {
public:
    void factor(Matrix& gram)
    {
        llt_.compute(gram);
        if (llt_.info() != Eigen::Success) {
            const double jitter = 1e-12 * std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
            gram.diagonal().array() += jitter;
            llt_.compute(gram);
            if (llt_.info() != Eigen::Success) {
                throw Error(ErrorCode::UnboundedObjective, "normal equations lost positive definiteness");
            }
        }
    }
    Vector solve(const Vector& rhs) const { return llt_.solve(rhs); }

private:
    Eigen::LLT<Matrix, Eigen::Lower> llt_;
};

} // namespace detail

/// Minimizes sum_i |y_i - x_i^T b| + sum_j pen_j |b_j| by the Frisch-Newton
/// primal-dual interior-point method with Mehrotra predictor-corrector
/// steps, applied to the bounded-variable dual LP
///   max_a y_aug^T a  s.t.  X_aug^T a = X_aug^T 1 / 2,  0 <= a <= 1.
/// The coefficients are the negated equality-constraint multipliers.
/// `scale` normalizes the stopping rule: stop when
///   gap / scale <= relative_gap * (1 + objective / scale).
inline LadLpResult solve_lad_lp(const Matrix& x, const Vector& y, const Vector& pen, double scale,
                                const LadLpOptions& options = {})
{
    require(pen.size() == x.cols(), "penalty vector length differs from column count");
    require(y.size() == x.rows(), "response length differs from row count");

    LadLpResult result;
    const Eigen::Index k = x.cols();
    if (k == 0) {
        result.coef = Vector::Zero(0);
        result.objective = y.lpNorm<1>();
        return result;
    }

    const detail::AugmentedDesign a(x, pen);
    const Eigen::Index m = a.rows();
    const Eigen::Index n = x.rows();

    Vector c = Vector::Zero(m);
    c.head(n) = -y;
    const Vector upper = Vector::Ones(m);
    const Vector b = 0.5 * a.apply(upper);

    Vector xv = Vector::Constant(m, 0.5);
    Vector s = upper - xv;

    Matrix gram;
    detail::GramSolver solver;
    a.weighted_gram(Vector::Ones(m), gram);
    solver.factor(gram);
    Vector dual = solver.solve(a.apply(c));

    Vector r = c - a.apply_transpose(dual);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (r(i) == 0.0) {
            r(i) = 0.001;
        }
    }
    Vector z = r.cwiseMax(0.0);
    Vector w = z - r;

    auto duality_gap = [&] { return c.dot(xv) - dual.dot(b) + w.dot(upper); };
    auto converged = [&](double gap, double objective) {
        return 2.0 * gap / scale <= options.relative_gap * (1.0 + objective / scale);
    };

    const double beta = options.step_fraction;
    double gap = duality_gap();
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        const Vector coef = -dual;
        const double objective = a.objective(y, coef);
        if (!std::isfinite(gap) || !std::isfinite(objective)) {
            throw Error(ErrorCode::UnboundedObjective, "interior-point iterates diverged");
        }
        if (converged(gap, objective)) {
            break;
        }

        // Affine-scaling predictor.
        const Vector q = ((z.array() / xv.array()) + (w.array() / s.array())).inverse().matrix();
        r = z - w;
        a.weighted_gram(q, gram);
        solver.factor(gram);
        Vector rhs = a.apply(q.cwiseProduct(r));
        Vector dy = solver.solve(rhs);
        Vector dx = q.cwiseProduct(a.apply_transpose(dy) - r);
        Vector ds = -dx;
        Vector dz = -z.cwiseProduct(dx.cwiseQuotient(xv) + Vector::Ones(m));
        Vector dw = -w.cwiseProduct(ds.cwiseQuotient(s) + Vector::Ones(m));

        double fp = std::min(detail::boundary_step(xv, dx), detail::boundary_step(s, ds));
        double fd = std::min(detail::boundary_step(w, dw), detail::boundary_step(z, dz));
        fp = std::min(beta * fp, 1.0);
        fd = std::min(beta * fd, 1.0);

        if (std::min(fp, fd) < 1.0) {
            // Centering corrector.
            double mu = z.dot(xv) + w.dot(s);
            const double g = (z + fd * dz).dot(xv + fp * dx) + (w + fd * dw).dot(s + fp * ds);
            mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(m));
            const Vector dxdz = dx.cwiseProduct(dz);
            const Vector dsdw = ds.cwiseProduct(dw);
            const Vector xinv = xv.cwiseInverse();
            const Vector sinv = s.cwiseInverse();
            const Vector xi = mu * (xinv - sinv);
            rhs += a.apply(q.cwiseProduct(dxdz - dsdw - xi));
            dy = solver.solve(rhs);
            dx = q.cwiseProduct(a.apply_transpose(dy) + xi - r - dxdz + dsdw);
            ds = -dx;
            dz = mu * xinv - z - xinv.cwiseProduct(z).cwiseProduct(dx) - dxdz;
            dw = mu * sinv - w - sinv.cwiseProduct(w).cwiseProduct(ds) - dsdw;
            fp = std::min(detail::boundary_step(xv, dx), detail::boundary_step(s, ds));
            fd = std::min(detail::boundary_step(w, dw), detail::boundary_step(z, dz));
            fp = std::min(beta * fp, 1.0);
            fd = std::min(beta * fd, 1.0);
        }

        xv += fp * dx;
        s += fp * ds;
        dual += fd * dy;
        w += fd * dw;
        z += fd * dz;
        gap = duality_gap();
    }

    result.coef = -dual;
    result.iterations = it;
    result.gap = 2.0 * gap;
    result.objective = a.objective(y, result.coef);
    result.status = converged(gap, result.objective) ? SolverStatus::Optimal : SolverStatus::IterationLimit;
    return result;
}

} // namespace orthomed
