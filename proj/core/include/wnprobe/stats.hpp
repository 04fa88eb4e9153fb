// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace wnprobe {

double mean(std::span<const double> x);

// Standard error of the mean with the n-1 sample variance; 0 for n < 2.
double sem(std::span<const double> x);

// SEM of a proportion over n Bernoulli items, sqrt(p(1-p)/(n-1)); 0 for n < 2.
double proportion_sem(double p, std::size_t n);

struct PearsonResult {
  double r = 0.0;
  double p_value = 1.0;  // two-sided, Student t with n-2 degrees of freedom
  std::size_t n = 0;
};

// Throws input_error on length mismatch or n < 3, numerical_error on a constant series.
PearsonResult correlate(std::span<const double> x, std::span<const double> y);

}  // namespace wnprobe
