#pragma once

#include <cstddef>
#include <cstdint>

#include "occ/tensor.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// rows x cols, values in {0, 1}.
using OccupancyMask2D = Grid2D<std::uint8_t>;

struct RegionSplit {
  OccupancyMask2D active;    // AR: fused and image both occupied
  OccupancyMask2D inactive;  // IR: fused occupied, image empty
};

// Adaptive distillation weights. rho = n_active / n_inactive is kept as an
// exact ratio of counts next to its floating value.
struct DistillWeightMap {
  Grid2D<double> weights;
  double alpha = 1.0;
  double beta = 1.0;
  double rho = 0.0;  // 0 when the inactive region is empty
  std::size_t n_active = 0;
  std::size_t n_inactive = 0;

  double total() const;
};

// Bit set where the channel-wise L1 norm exceeds eps. Throws
// std::invalid_argument for eps < 0.
OccupancyMask2D occupancy_mask(const BevFeatureMap& f, double eps = 0.0);

// Throws std::invalid_argument on a shape mismatch.
RegionSplit region_split(const OccupancyMask2D& fused, const OccupancyMask2D& img);

// alpha on AR, rho * beta on IR, 0 elsewhere. With an empty IR the IR term
// vanishes and rho is recorded as 0.
DistillWeightMap distill_weights(const OccupancyMask2D& active,
                                 const OccupancyMask2D& inactive, double alpha,
                                 double beta);

struct DistillLoss {
  double loss = 0.0;
  BevFeatureMap grad_camera;  // d loss / d camera features
};

// sum_c sum_ij W(i,j) * (fused - camera)^2 with its gradient with respect to
// the camera map. The reduction is a fixed pairwise tree.
DistillLoss distill_loss(const BevFeatureMap& fused, const BevFeatureMap& camera,
                         const DistillWeightMap& w);

}  // namespace occ
