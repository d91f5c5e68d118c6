#pragma once

#include <boost/math/distributions/normal.hpp>

#include "orthomed/error.hpp"

namespace orthomed {

/// Standard normal distribution function.
inline double normal_cdf(double x)
{
    return boost::math::cdf(boost::math::normal_distribution<double>(), x);
}

/// Standard normal quantile.
inline double normal_quantile(double p)
{
    require(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// (1 - xi)-quantile of the chi-square distribution with one degree of
/// freedom, via its relation to the two-sided normal quantile.
inline double chi2_1_quantile_upper(double xi)
{
    const double z = normal_quantile(1.0 - xi / 2.0);
    return z * z;
}

} // namespace orthomed
