#pragma once

#include <cstddef>
#include <cstdint>

#include "occ/tensor.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// classes x height bins x rows(y) x cols(x).
using OccupancyLogits = Tensor<double, 4>;

// Semantic voxel grid. Labels are rows(y) x cols(x) x height bins; the last
// class id (class_count - 1) is "empty".
struct OccupancyGrid {
  Tensor<std::uint8_t, 3> labels;
  std::size_t class_count = 0;

  std::uint8_t empty_label() const { return static_cast<std::uint8_t>(class_count - 1); }
  bool operator==(const OccupancyGrid&) const = default;
};

OccupancyGrid empty_grid(std::size_t rows, std::size_t cols, std::size_t depth,
                         std::size_t class_count);

// Reinterprets C = class_count * depth_bins BEV channels as
// (class, height) with channel = class * depth_bins + height. Throws
// std::invalid_argument when the channel count does not factor that way.
OccupancyLogits channel_to_height(const BevFeatureMap& bev,
                                  std::size_t class_count,
                                  std::size_t depth_bins);

// Inverse of channel_to_height.
BevFeatureMap height_to_channel(const OccupancyLogits& logits);

// Per-voxel argmax over classes; ties go to the smaller class id.
OccupancyGrid decode_labels(const OccupancyLogits& logits);

}  // namespace occ
