#pragma once

#include <cstddef>

#include "occ/tensor.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// Denominator used to scale attention logits.
enum class AttentionScale {
  value_dim,  // sqrt(v)
  key_dim,    // sqrt(q), the usual transformer convention
};

struct AttentionParams {
  Grid2D<double> query_proj;  // m_source x q
  Grid2D<double> key_proj;    // m_cross x q
  Grid2D<double> value_proj;  // m_cross x v
  Grid2D<double> rel_bias;    // (2k-1) x (2k-1), indexed (di + k - 1, dj + k - 1)
  int window = 7;             // k, odd
  AttentionScale scale = AttentionScale::value_dim;

  std::size_t query_dim() const { return query_proj.dim(1); }
  std::size_t value_dim() const { return value_proj.dim(1); }
  // Throws std::invalid_argument on an even or non-positive window, projection
  // shapes that disagree, or non-finite entries.
  void validate() const;
};

struct GateParams {
  Grid2D<double> weights;    // v x v, 1x1 convolution over channels
  std::vector<double> bias;  // v

  void validate(std::size_t channels) const;
};

enum class FusionDirection {
  camera_source,  // camera queries LiDAR neighbourhoods
  lidar_source,   // LiDAR queries camera neighbourhoods
};

// Windowed cross attention. For every position i, queries come from `source`
// at i, keys and values from `cross` over the k x k window centred on i.
// Windows are truncated at the border and the softmax runs over in-bounds
// neighbours only. Output has value_dim() channels.
BevFeatureMap neighborhood_attention(const BevFeatureMap& source,
                                     const BevFeatureMap& cross,
                                     const AttentionParams& p);

// Per-channel gate: sigmoid(W * mean_hw(neighbor) + b), broadcast over space.
BevFeatureMap gated_fuse(const BevFeatureMap& neighbor, const GateParams& g);

// neighborhood_attention followed by gated_fuse, with source/cross chosen by
// direction.
BevFeatureMap fuse_bev(const BevFeatureMap& camera, const BevFeatureMap& lidar,
                       const AttentionParams& p, const GateParams& g,
                       FusionDirection direction);

// Attention weights of one query over its window (row-major over in-bounds
// neighbours). Exposed for diagnostics and tests.
std::vector<double> attention_weights(const BevFeatureMap& source,
                                      const BevFeatureMap& cross,
                                      const AttentionParams& p,
                                      std::size_t row, std::size_t col);

// Identity-like parameters: projections are gain * I (query) and I (key,
// value), the bias is zero, and the gate bias is gate_bias.
AttentionParams identity_attention(std::size_t channels, int window,
                                   double query_gain = 1.0);
GateParams constant_gate(std::size_t channels, double bias);

}  // namespace occ
