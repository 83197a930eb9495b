#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "occ/geometry.hpp"
#include "occ/grid_spec.hpp"
#include "occ/occupancy_head.hpp"

namespace occ {

using VoxelMask = Tensor<std::uint8_t, 3>;

// counts(truth, pred) over evaluated voxels.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes)
      : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t total() const;
  std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
  std::uint64_t false_positives(std::size_t c) const;
  std::uint64_t false_negatives(std::size_t c) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

// Counts voxels where visible != 0, or every voxel when visible is null.
// Throws std::invalid_argument on shape or class-count mismatch.
ConfusionMatrix accumulate(const OccupancyGrid& pred, const OccupancyGrid& truth,
                           const VoxelMask* visible = nullptr);

// What to do with classes absent from both prediction and truth.
enum class UndefinedIou {
  exclude,  // reported as undefined, left out of the mean
  as_zero,  // scored 0 and averaged
};

struct IouReport {
  std::vector<std::size_t> classes;               // evaluated class ids
  std::vector<std::optional<double>> per_class;   // aligned with classes
  std::optional<double> mean;                     // undefined when no class is
};

// IoU_c = TP / (TP + FP + FN). Throws std::invalid_argument on an empty
// include set or an out-of-range class id.
IouReport miou(const ConfusionMatrix& cm, std::span<const std::size_t> include,
               UndefinedIou policy = UndefinedIou::exclude);

// Object classes of a grid: every id except the trailing empty class.
std::vector<std::size_t> semantic_classes(std::size_t class_count);

// Geometry IoU of "any non-empty class" against the empty (last) class.
std::optional<double> binary_iou(const ConfusionMatrix& cm);

struct DistanceBinReport {
  double lower = 0.0;  // meters, inclusive
  double upper = 0.0;  // meters, exclusive; +inf for the last bin
  std::uint64_t voxels = 0;
  std::optional<double> iou;
  IouReport semantic;
};

// Partitions voxels by the horizontal distance of their centre to `ego` into
// [0, e1), [e1, e2), ..., [en, inf) for ascending edges e1..en, then
// evaluates each bin.
std::vector<DistanceBinReport> distance_binned_eval(
    const OccupancyGrid& pred, const OccupancyGrid& truth,
    const VoxelGridSpec& grid, const Point3& ego, std::span<const double> edges,
    const VoxelMask* visible = nullptr,
    UndefinedIou policy = UndefinedIou::exclude);

}  // namespace occ
