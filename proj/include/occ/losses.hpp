#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "occ/tensor.hpp"

namespace occ {

struct LossResult {
  double value = 0.0;
  Grid2D<double> grad;  // same shape as the differentiated input
};

// Mean over rows of -log softmax(logits[i])[targets[i]]; logits is n x K.
// Throws std::invalid_argument for K < 2, a target count mismatch, or a
// target >= K.
LossResult cross_entropy(const Grid2D<double>& logits,
                         std::span<const std::size_t> targets);

// Cross-entropy averaged over rows with mask != 0. An all-zero mask yields
// loss 0 and a zero gradient.
LossResult masked_cross_entropy(const Grid2D<double>& logits,
                                std::span<const std::size_t> targets,
                                std::span<const std::uint8_t> mask);

// Multi-class Lovasz-softmax over a K x n probability matrix (columns are
// pixels). Per class, errors |[y == c] - p_c| are sorted in decreasing order
// and weighted by the Jaccard-loss increments of the sorted ground truth; the
// result is averaged over classes present in targets. The gradient is with
// respect to the probabilities. Throws std::invalid_argument when a column is
// negative or does not sum to 1 within 1e-6.
LossResult lovasz_softmax(const Grid2D<double>& probabilities,
                          std::span<const std::size_t> targets);

// Jaccard-loss increments for a ground-truth indicator already sorted by
// decreasing error.
std::vector<double> lovasz_grad(std::span<const std::uint8_t> gt_sorted);

struct LossWeights {
  double lambda_depth = 0.05;
  double lambda_seg = 0.5;
  double lambda_pts = 1.0;
  double lambda_mask_occ = 1.0;
  double lambda_kl = 1.0;

  void validate() const;
};

struct LossComponents {
  double depth = 0.0;
  double seg = 0.0;
  double pts = 0.0;
  double mask_occ = 0.0;
  double distill = 0.0;
};

// Point-supervision loss: Lovasz and cross-entropy combined 1:1.
inline double points_loss(double lovasz, double ce) { return lovasz + ce; }

double total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace occ
