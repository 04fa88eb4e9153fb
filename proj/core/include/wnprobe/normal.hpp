// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace wnprobe {

double normal_cdf(double x);

// Inverse of the standard normal CDF on (0, 1). Rational approximation refined
// with one Halley step; absolute error below 1e-14 across the range we use.
double normal_quantile(double p);

}  // namespace wnprobe
