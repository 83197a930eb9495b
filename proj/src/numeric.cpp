#include "occ/numeric.hpp"

#include <algorithm>
#include <limits>

namespace occ {

double pairwise_sum(std::span<const double> xs) {
  constexpr std::size_t kLeaf = 8;
  if (xs.size() <= kLeaf) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

void softmax_inplace(std::span<double> xs) {
  if (xs.empty()) return;
  const double m = *std::max_element(xs.begin(), xs.end());
  double total = 0.0;
  for (double& x : xs) {
    x = std::exp(x - m);
    total += x;
  }
  for (double& x : xs) x /= total;
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  double total = 0.0;
  for (double x : xs) total += std::exp(x - m);
  return m + std::log(total);
}

}  // namespace occ
