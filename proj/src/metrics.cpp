#include "occ/metrics.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

#include "occ/parallel.hpp"

namespace occ {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::false_positives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) {
    if (t != c) s += at(t, c);
  }
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) {
    if (p != c) s += at(c, p);
  }
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw std::invalid_argument("confusion matrix: class count mismatch");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

namespace {

void check_pair(const OccupancyGrid& pred, const OccupancyGrid& truth,
                const VoxelMask* visible) {
  require_same_shape(pred.labels, truth.labels, "accumulate");
  if (pred.class_count != truth.class_count) {
    throw std::invalid_argument("accumulate: class count mismatch");
  }
  if (visible) require_same_shape(pred.labels, *visible, "accumulate");
}

template <typename Select>
ConfusionMatrix accumulate_if(const OccupancyGrid& pred,
                              const OccupancyGrid& truth, Select select) {
  const std::size_t classes = pred.class_count;
  const std::size_t n = pred.labels.size();
  ConfusionMatrix total(classes);
  std::mutex mu;
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    ConfusionMatrix local(classes);
    for (std::size_t i = lo; i < hi; ++i) {
      if (!select(i)) continue;
      const std::size_t t = truth.labels.values()[i];
      const std::size_t p = pred.labels.values()[i];
      if (t >= classes || p >= classes) {
        throw std::invalid_argument("accumulate: label outside class range");
      }
      ++local.at(t, p);
    }
    std::lock_guard<std::mutex> lock(mu);
    total += local;  // integer sums: merge order does not matter
  }, 1 << 14);
  return total;
}

}  // namespace

ConfusionMatrix accumulate(const OccupancyGrid& pred, const OccupancyGrid& truth,
                           const VoxelMask* visible) {
  check_pair(pred, truth, visible);
  if (!visible) return accumulate_if(pred, truth, [](std::size_t) { return true; });
  return accumulate_if(pred, truth, [&](std::size_t i) {
    return visible->values()[i] != 0;
  });
}

IouReport miou(const ConfusionMatrix& cm, std::span<const std::size_t> include,
               UndefinedIou policy) {
  if (include.empty()) throw std::invalid_argument("miou: empty class set");
  IouReport rep;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c : include) {
    if (c >= cm.classes()) throw std::invalid_argument("miou: class id out of range");
    const std::uint64_t tp = cm.true_positives(c);
    const std::uint64_t denom = tp + cm.false_positives(c) + cm.false_negatives(c);
    rep.classes.push_back(c);
    if (denom == 0) {
      if (policy == UndefinedIou::as_zero) {
        rep.per_class.push_back(0.0);
        ++counted;
      } else {
        rep.per_class.push_back(std::nullopt);
      }
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    rep.per_class.push_back(iou);
    sum += iou;
    ++counted;
  }
  if (counted > 0) rep.mean = sum / static_cast<double>(counted);
  return rep;
}

std::vector<std::size_t> semantic_classes(std::size_t class_count) {
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c + 1 < class_count; ++c) ids.push_back(c);
  return ids;
}

std::optional<double> binary_iou(const ConfusionMatrix& cm) {
  if (cm.classes() == 0) return std::nullopt;
  const std::size_t empty = cm.classes() - 1;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    for (std::size_t p = 0; p < cm.classes(); ++p) {
      const bool to = t != empty;
      const bool po = p != empty;
      if (to && po) tp += cm.at(t, p);
      if (!to && po) fp += cm.at(t, p);
      if (to && !po) fn += cm.at(t, p);
    }
  }
  const std::uint64_t denom = tp + fp + fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<DistanceBinReport> distance_binned_eval(
    const OccupancyGrid& pred, const OccupancyGrid& truth,
    const VoxelGridSpec& grid, const Point3& ego, std::span<const double> edges,
    const VoxelMask* visible, UndefinedIou policy) {
  check_pair(pred, truth, visible);
  grid.validate();
  if (pred.labels.dim(0) != grid.bev.rows() || pred.labels.dim(1) != grid.bev.cols() ||
      pred.labels.dim(2) != grid.depth_bins()) {
    throw std::invalid_argument("distance_binned_eval: grid spec does not match labels");
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!(edges[i] > 0.0) || (i > 0 && !(edges[i] > edges[i - 1]))) {
      throw std::invalid_argument("distance_binned_eval: edges must be positive and ascending");
    }
  }
  const std::size_t bins = edges.size() + 1;
  const std::size_t rows = pred.labels.dim(0);
  const std::size_t cols = pred.labels.dim(1);
  const std::size_t depth = pred.labels.dim(2);

  // Bin id per voxel column; distance is horizontal so z does not matter.
  std::vector<std::size_t> column_bin(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double dx = grid.bev.cell_center_x(c) - ego.x;
      const double dy = grid.bev.cell_center_y(r) - ego.y;
      const double dist = std::hypot(dx, dy);
      std::size_t b = 0;
      while (b < edges.size() && dist >= edges[b]) ++b;
      column_bin[r * cols + c] = b;
    }
  }

  std::vector<DistanceBinReport> out(bins);
  const auto include = semantic_classes(pred.class_count);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = b == 0 ? 0.0 : edges[b - 1];
    out[b].upper = b < edges.size() ? edges[b] : std::numeric_limits<double>::infinity();
    const ConfusionMatrix cm = accumulate_if(pred, truth, [&](std::size_t i) {
      if (visible && visible->values()[i] == 0) return false;
      return column_bin[i / depth] == b;
    });
    out[b].voxels = cm.total();
    out[b].iou = binary_iou(cm);
    out[b].semantic = include.empty() ? IouReport{} : miou(cm, include, policy);
  }
  return out;
}

}  // namespace occ
