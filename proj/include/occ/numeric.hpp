#pragma once

#include <cmath>
#include <span>

namespace occ {

// Fixed-tree pairwise summation. The tree shape depends only on the length,
// so sums are reproducible regardless of how the inputs were produced.
double pairwise_sum(std::span<const double> xs);

// In-place softmax with max subtraction. Empty input is a no-op.
void softmax_inplace(std::span<double> xs);

// log(sum(exp(xs))) with max subtraction.
double log_sum_exp(std::span<const double> xs);

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace occ
