// SPDX-License-Identifier: Apache-2.0
#include "wnprobe/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "wnprobe/error.hpp"

namespace wnprobe {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sem(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

double proportion_sem(double p, std::size_t n) {
  if (n < 2) return 0.0;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n - 1));
}

PearsonResult correlate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw input_error("correlate: series lengths differ");
  const std::size_t n = x.size();
  if (n < 3) throw input_error("correlate: need at least 3 points, got " + std::to_string(n));
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw numerical_error("correlate: constant series, r is undefined");
  PearsonResult out;
  out.n = n;
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(n - 2);
  const double denom = 1.0 - out.r * out.r;
  if (denom <= 0.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.r * std::sqrt(df / denom);
    boost::math::students_t dist(df);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
  }
  return out;
}

}  // namespace wnprobe
