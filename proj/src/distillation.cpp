#include "occ/distillation.hpp"

#include <cmath>
#include <stdexcept>

#include "occ/numeric.hpp"

namespace occ {

double DistillWeightMap::total() const { return pairwise_sum(weights.values()); }

OccupancyMask2D occupancy_mask(const BevFeatureMap& f, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("occupancy_mask: eps must be >= 0");
  const std::size_t rows = f.dim(1);
  const std::size_t cols = f.dim(2);
  OccupancyMask2D mask({rows, cols}, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double l1 = 0.0;
      for (std::size_t ch = 0; ch < f.dim(0); ++ch) l1 += std::abs(f(ch, r, c));
      mask(r, c) = l1 > eps ? 1 : 0;
    }
  }
  return mask;
}

RegionSplit region_split(const OccupancyMask2D& fused, const OccupancyMask2D& img) {
  require_same_shape(fused, img, "region_split");
  RegionSplit out{OccupancyMask2D(fused.shape(), 0), OccupancyMask2D(fused.shape(), 0)};
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const bool f = fused.values()[i] != 0;
    const bool m = img.values()[i] != 0;
    out.active.values()[i] = (f && m) ? 1 : 0;
    out.inactive.values()[i] = (f && !m) ? 1 : 0;
  }
  return out;
}

DistillWeightMap distill_weights(const OccupancyMask2D& active,
                                 const OccupancyMask2D& inactive, double alpha,
                                 double beta) {
  require_same_shape(active, inactive, "distill_weights");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("distill_weights: alpha and beta must be >= 0");
  }
  DistillWeightMap w;
  w.alpha = alpha;
  w.beta = beta;
  w.weights = Grid2D<double>(active.shape(), 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) {
    w.n_active += active.values()[i] != 0;
    w.n_inactive += inactive.values()[i] != 0;
  }
  w.rho = w.n_inactive > 0
              ? static_cast<double>(w.n_active) / static_cast<double>(w.n_inactive)
              : 0.0;
  const double ir_weight = w.rho * beta;
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (active.values()[i] != 0) {
      w.weights.values()[i] = alpha;
    } else if (inactive.values()[i] != 0) {
      w.weights.values()[i] = ir_weight;
    }
  }
  return w;
}

DistillLoss distill_loss(const BevFeatureMap& fused, const BevFeatureMap& camera,
                         const DistillWeightMap& w) {
  require_same_shape(fused, camera, "distill_loss");
  if (w.weights.dim(0) != fused.dim(1) || w.weights.dim(1) != fused.dim(2)) {
    throw std::invalid_argument("distill_loss: weight map size mismatch");
  }
  const std::size_t channels = fused.dim(0);
  const std::size_t cells = fused.dim(1) * fused.dim(2);
  DistillLoss out{0.0, BevFeatureMap(fused.shape(), 0.0)};
  std::vector<double> terms(channels * cells);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t n = 0; n < cells; ++n) {
      const std::size_t i = ch * cells + n;
      const double wt = w.weights.values()[n];
      const double diff = fused.values()[i] - camera.values()[i];
      terms[i] = wt * diff * diff;
      out.grad_camera.values()[i] = -2.0 * wt * diff;
    }
  }
  out.loss = pairwise_sum(terms);
  return out;
}

}  // namespace occ
