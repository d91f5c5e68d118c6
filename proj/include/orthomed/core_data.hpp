#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "orthomed/error.hpp"

namespace orthomed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Sorted, duplicate-free column indices.
using IndexSet = std::vector<int>;

/// Observed data (y, d, x). Column-major dense storage; x may carry an
/// all-ones intercept column, which gets no special treatment.
class Sample {
public:
    Sample(Vector y, Vector d, Matrix x) : y_(std::move(y)), d_(std::move(d)), x_(std::move(x))
    {
        const auto n = y_.size();
        require(n >= 2, "sample needs at least two observations");
        require(d_.size() == n, "treatment length differs from response length");
        require(x_.rows() == n, "control matrix row count differs from response length");
        require(x_.cols() >= 1, "control matrix needs at least one column");
        require(y_.allFinite() && d_.allFinite() && x_.allFinite(), "sample contains NaN or Inf");
    }

    const Vector& y() const noexcept { return y_; }
    const Vector& d() const noexcept { return d_; }
    const Matrix& x() const noexcept { return x_; }
    int n() const noexcept { return static_cast<int>(y_.size()); }
    int p() const noexcept { return static_cast<int>(x_.cols()); }

    /// (d, x) stacked column-wise.
    Matrix xtilde() const
    {
        Matrix out(n(), p() + 1);
        out.col(0) = d_;
        out.rightCols(p()) = x_;
        return out;
    }

private:
    Vector y_;
    Vector d_;
    Matrix x_;
};

/// Loadings for the l1 penalty: entry 0 scales the treatment, entry j+1
/// scales control column j.
struct PenaltyWeights {
    Vector psi;
};

/// phi(t) = 1/2 - 1{t <= 0}.
constexpr double sign_score(double t) noexcept { return t > 0.0 ? 0.5 : -0.5; }

inline double mean_square(const Eigen::Ref<const Vector>& v) { return v.squaredNorm() / static_cast<double>(v.size()); }

inline PenaltyWeights column_loadings(const Sample& sample)
{
    const Matrix xt = sample.xtilde();
    PenaltyWeights w{Vector(xt.cols())};
    for (Eigen::Index j = 0; j < xt.cols(); ++j) {
        const double rms = std::sqrt(mean_square(xt.col(j)));
        if (!(rms > 0.0)) {
            throw Error(ErrorCode::DegenerateColumn,
                        j == 0 ? std::string("treatment column d is identically zero")
                               : "control column x" + std::to_string(j) + " is identically zero");
        }
        w.psi(j) = rms;
    }
    return w;
}

/// True when every entry of control column j equals 1.
inline bool is_intercept_column(const Sample& sample, int j)
{
    return (sample.x().col(j).array() == 1.0).all();
}

/// Indices j with |v_j| > threshold.
inline IndexSet support_of(const Eigen::Ref<const Vector>& v, double threshold)
{
    IndexSet out;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (std::abs(v(j)) > threshold) {
            out.push_back(static_cast<int>(j));
        }
    }
    return out;
}

inline IndexSet set_union(const IndexSet& a, const IndexSet& b)
{
    IndexSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

/// Hyndman-Fan type 7 sample quantile (linear interpolation between order
/// statistics). Takes its argument by value because it sorts.
inline double quantile_type7(std::vector<double> values, double prob)
{
    require(!values.empty(), "quantile of an empty sample");
    require(prob >= 0.0 && prob <= 1.0, "quantile probability outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) {
        return values.back();
    }
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Deterministic random stream keyed by (seed, stream id). Streams with
/// different ids are statistically independent; substream() derives
/// further keyed children so every task can own its own generator.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream),
          key_(detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(stream + 0x632BE59BD9B4E019ULL))),
          engine_(key_)
    {
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    RngStream substream(std::uint64_t k) const { return RngStream(key_, k); }

    double uniform() { return uniform_(engine_); }
    double normal() { return normal_(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace orthomed
