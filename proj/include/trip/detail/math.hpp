#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

namespace trip::detail {

inline double log_normal_pdf(double z, double mean, double sd)
{
  const double u = (z - mean) / sd;
  return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double log_sum_exp(std::span<const double> xs)
{
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs)
    mx = std::max(mx, x);
  if (!std::isfinite(mx))
    return mx;
  double s = 0.0;
  for (double x : xs)
    s += std::exp(x - mx);
  return mx + std::log(s);
}

} // namespace trip::detail
