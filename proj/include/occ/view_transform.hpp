#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "occ/geometry.hpp"
#include "occ/grid_spec.hpp"
#include "occ/tensor.hpp"

namespace occ {

// rows x cols, meters; 0 marks "no measurement".
using DepthMap = Grid2D<double>;
// rows x cols class ids; 0 is background / unlabeled.
using SemanticMask = Grid2D<std::uint16_t>;
// channels x rows(y) x cols(x).
using BevFeatureMap = Tensor<double, 3>;

struct ImageFeatureMap {
  Tensor<double, 3> features;      // C x H x W texture features
  Tensor<double, 3> depth_logits;  // H x W x B, pre-softmax, one per hypothesis

  std::size_t channels() const { return features.dim(0); }
  std::size_t rows() const { return features.dim(1); }
  std::size_t cols() const { return features.dim(2); }
  std::size_t hypotheses() const { return depth_logits.dim(2); }
};

struct CoPointMaps {
  DepthMap depth;       // nearest co-point depth per pixel
  SemanticMask labels;  // class of the point that won the pixel
};

// Rasterizes the points that project into the image at
// (floor(v), floor(u)). When several points land in one pixel the smallest
// depth wins.
CoPointMaps scatter_copoints(std::span<const LabeledPoint> points,
                             const Extrinsics& ex, const CameraIntrinsics& k);

// Semantic-masked depth diffusion. For every pixel with a non-zero label, the
// result is the mean of the measured depths inside the disk
// di^2 + dj^2 <= radius^2 that carry the same label, or 0 when none do.
// Pixels that hold a measurement keep it exactly; pixels labelled 0 get 0.
DepthMap diffuse_depth(const DepthMap& depth, const SemanticMask& mask,
                       int radius_px);

// As above, but only pixels flagged in `copoints` count as measurements.
// Re-diffusing a diffused map with the original co-point flags is a no-op.
DepthMap diffuse_depth(const DepthMap& depth, const SemanticMask& mask,
                       int radius_px, const Grid2D<std::uint8_t>& copoints);

// How the "layers" knob maps onto hypotheses per pixel.
enum class LayersMeaning {
  per_side,  // 2 * layers hypotheses
  total,     // layers hypotheses (layers must be even)
};

struct DiscretizationParams {
  double range_m = 1.0;
  int layers = 8;
  LayersMeaning meaning = LayersMeaning::per_side;

  int per_side() const;
  int per_pixel() const { return 2 * per_side(); }
};

inline constexpr double kMinHypothesisDepth = 0.05;
// Hypotheses that would fall at or below the floor are set to this value, the
// next double above it, so every emitted depth is strictly greater.
inline const double kClampedHypothesisDepth = std::nextafter(kMinHypothesisDepth, 1.0);

// Sorted offsets of the bidirectional linear-increasing schedule:
// +-(range/2) * k(k+1) / (n(n+1)) for k = 1..n. Gaps between neighbours grow
// linearly with distance from the centre, so samples are densest at the
// measured depth and the outermost pair sits at +-range/2.
std::vector<double> hypothesis_offsets(double range_m, int per_side);

// Per-pixel depth hypotheses, rows x cols x per_pixel. Pixels without an
// extended depth carry no hypotheses.
class DepthHypotheses {
 public:
  DepthHypotheses() = default;
  DepthHypotheses(std::size_t rows, std::size_t cols, std::size_t per_pixel);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t per_pixel() const { return per_pixel_; }

  bool has(std::size_t r, std::size_t c) const { return active_[r * cols_ + c] != 0; }
  // Empty span for pixels without hypotheses.
  std::span<const double> at(std::size_t r, std::size_t c) const;
  std::span<double> assign(std::size_t r, std::size_t c);
  std::size_t active_pixels() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t per_pixel_ = 0;
  std::vector<double> depths_;
  std::vector<std::uint8_t> active_;
};

// Emits 2 * per_side hypotheses around every pixel with depth d > 0, clamped
// to kClampedHypothesisDepth. Throws std::invalid_argument when per_side < 1
// or range_m <= 0.
DepthHypotheses discretize_depths(const DepthMap& extended, double range_m,
                                  int per_side);
DepthHypotheses discretize_depths(const DepthMap& extended,
                                  const DiscretizationParams& params);

// One depth hypothesis of one pixel. Its feature is weight * F_t(:, row, col).
struct VirtualPoint {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t hypothesis = 0;
  double depth = 0.0;
  double weight = 0.0;
  Point3 position;
};

// Virtual points in row-major pixel order, then hypothesis order. Weights are
// the softmax of each pixel's depth logits. Throws std::invalid_argument when
// the logit count differs from the hypothesis count or shapes disagree.
std::vector<VirtualPoint> make_virtual_points(const ImageFeatureMap& img,
                                              const DepthHypotheses& hyps,
                                              const Extrinsics& ex,
                                              const CameraIntrinsics& k);

// Sums weight * feature of every virtual point into its BEV cell. Points
// outside the grid are dropped. Each cell sums its points in input order.
BevFeatureMap bev_pool(std::span<const VirtualPoint> points,
                       const Tensor<double, 3>& features,
                       const BevGridSpec& spec);

// make_virtual_points followed by bev_pool.
BevFeatureMap lift_to_bev(const ImageFeatureMap& img,
                          const DepthHypotheses& hyps, const Extrinsics& ex,
                          const CameraIntrinsics& k, const BevGridSpec& spec);

// Number of BEV cells whose feature column is not all zero.
std::size_t occupied_cells(const BevFeatureMap& bev);

}  // namespace occ
