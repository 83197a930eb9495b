#include "occ/occupancy_head.hpp"

#include <stdexcept>

#include "occ/parallel.hpp"

namespace occ {

OccupancyGrid empty_grid(std::size_t rows, std::size_t cols, std::size_t depth,
                         std::size_t class_count) {
  if (class_count < 1 || class_count > 256) {
    throw std::invalid_argument("occupancy grid: class count must be in [1, 256]");
  }
  OccupancyGrid g;
  g.class_count = class_count;
  g.labels = Tensor<std::uint8_t, 3>({rows, cols, depth},
                                     static_cast<std::uint8_t>(class_count - 1));
  return g;
}

OccupancyLogits channel_to_height(const BevFeatureMap& bev,
                                  std::size_t class_count,
                                  std::size_t depth_bins) {
  if (class_count == 0 || depth_bins == 0 ||
      bev.dim(0) != class_count * depth_bins) {
    throw std::invalid_argument(
        "channel_to_height: channels must equal class_count * depth_bins");
  }
  // Class-major channel order makes this a pure reshape of the buffer.
  return OccupancyLogits({class_count, depth_bins, bev.dim(1), bev.dim(2)},
                         bev.storage());
}

BevFeatureMap height_to_channel(const OccupancyLogits& logits) {
  return BevFeatureMap({logits.dim(0) * logits.dim(1), logits.dim(2), logits.dim(3)},
                       logits.storage());
}

OccupancyGrid decode_labels(const OccupancyLogits& logits) {
  const std::size_t classes = logits.dim(0);
  const std::size_t depth = logits.dim(1);
  const std::size_t rows = logits.dim(2);
  const std::size_t cols = logits.dim(3);
  OccupancyGrid grid = empty_grid(rows, cols, depth, classes);
  parallel_for(0, rows, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t z = 0; z < depth; ++z) {
          std::size_t best = 0;
          double best_v = logits(0, z, r, c);
          for (std::size_t k = 1; k < classes; ++k) {
            const double v = logits(k, z, r, c);
            if (v > best_v) {
              best_v = v;
              best = k;
            }
          }
          grid.labels(r, c, z) = static_cast<std::uint8_t>(best);
        }
      }
    }
  });
  return grid;
}

}  // namespace occ
