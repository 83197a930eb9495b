#include "occ/view_transform.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "occ/numeric.hpp"
#include "occ/parallel.hpp"

namespace occ {

CoPointMaps scatter_copoints(std::span<const LabeledPoint> points,
                             const Extrinsics& ex, const CameraIntrinsics& k) {
  k.validate();
  const auto rows = static_cast<std::size_t>(k.height);
  const auto cols = static_cast<std::size_t>(k.width);
  CoPointMaps out{DepthMap({rows, cols}, 0.0), SemanticMask({rows, cols}, 0)};
  for (const auto& pt : points) {
    const auto pd = project(pt.position, ex, k);
    if (!pd) continue;
    const auto r = static_cast<std::size_t>(std::floor(pd->v));
    const auto c = static_cast<std::size_t>(std::floor(pd->u));
    double& cell = out.depth(r, c);
    if (cell == 0.0 || pd->depth < cell) {
      cell = pd->depth;
      out.labels(r, c) = pt.class_id;
    }
  }
  return out;
}

namespace {

struct Offset {
  int di;
  int dj;
};

std::vector<Offset> disk_offsets(int radius) {
  std::vector<Offset> offs;
  for (int di = -radius; di <= radius; ++di) {
    for (int dj = -radius; dj <= radius; ++dj) {
      if (di * di + dj * dj <= radius * radius) offs.push_back({di, dj});
    }
  }
  return offs;
}

// measured(p, q) decides which cells act as depth samples.
template <typename Measured>
DepthMap diffuse_impl(const DepthMap& depth, const SemanticMask& mask,
                      int radius_px, Measured measured) {
  require_same_shape(depth, mask, "diffuse_depth");
  if (radius_px < 0) {
    throw std::invalid_argument("diffuse_depth: radius must be >= 0");
  }
  const std::size_t rows = depth.dim(0);
  const std::size_t cols = depth.dim(1);
  const auto offs = disk_offsets(radius_px);
  DepthMap out({rows, cols}, 0.0);

  parallel_for(0, rows, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::uint16_t label = mask(i, j);
        if (label == 0) continue;
        if (measured(i, j)) {
          out(i, j) = depth(i, j);
          continue;
        }
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& o : offs) {
          const long p = static_cast<long>(i) + o.di;
          const long q = static_cast<long>(j) + o.dj;
          if (p < 0 || q < 0 || p >= static_cast<long>(rows) ||
              q >= static_cast<long>(cols)) {
            continue;
          }
          const auto pp = static_cast<std::size_t>(p);
          const auto qq = static_cast<std::size_t>(q);
          if (mask(pp, qq) == label && measured(pp, qq)) {
            sum += depth(pp, qq);
            ++n;
          }
        }
        if (n > 0) out(i, j) = sum / static_cast<double>(n);
      }
    }
  });
  return out;
}

}  // namespace

DepthMap diffuse_depth(const DepthMap& depth, const SemanticMask& mask,
                       int radius_px) {
  return diffuse_impl(depth, mask, radius_px, [&](std::size_t p, std::size_t q) {
    return depth(p, q) > 0.0;
  });
}

DepthMap diffuse_depth(const DepthMap& depth, const SemanticMask& mask,
                       int radius_px, const Grid2D<std::uint8_t>& copoints) {
  require_same_shape(depth, copoints, "diffuse_depth");
  return diffuse_impl(depth, mask, radius_px, [&](std::size_t p, std::size_t q) {
    return copoints(p, q) != 0 && depth(p, q) > 0.0;
  });
}

int DiscretizationParams::per_side() const {
  if (layers < 1) throw std::invalid_argument("discretize: layers must be >= 1");
  if (meaning == LayersMeaning::per_side) return layers;
  if (layers % 2 != 0) {
    throw std::invalid_argument(
        "discretize: total layer count must be even for a symmetric schedule");
  }
  return layers / 2;
}

std::vector<double> hypothesis_offsets(double range_m, int per_side) {
  if (per_side < 1) throw std::invalid_argument("discretize: layers must be >= 1");
  if (!(range_m > 0.0)) throw std::invalid_argument("discretize: range must be > 0");
  const double n = per_side;
  const double denom = n * (n + 1.0);
  std::vector<double> offs(2 * static_cast<std::size_t>(per_side));
  for (int k = 1; k <= per_side; ++k) {
    const double o = 0.5 * range_m * (k * (k + 1.0)) / denom;
    offs[per_side - k] = -o;
    offs[per_side + k - 1] = o;
  }
  return offs;
}

DepthHypotheses::DepthHypotheses(std::size_t rows, std::size_t cols,
                                 std::size_t per_pixel)
    : rows_(rows),
      cols_(cols),
      per_pixel_(per_pixel),
      depths_(rows * cols * per_pixel, 0.0),
      active_(rows * cols, 0) {}

std::span<const double> DepthHypotheses::at(std::size_t r, std::size_t c) const {
  if (!has(r, c)) return {};
  return std::span<const double>(depths_).subspan((r * cols_ + c) * per_pixel_,
                                                  per_pixel_);
}

std::span<double> DepthHypotheses::assign(std::size_t r, std::size_t c) {
  active_[r * cols_ + c] = 1;
  return std::span<double>(depths_).subspan((r * cols_ + c) * per_pixel_,
                                            per_pixel_);
}

std::size_t DepthHypotheses::active_pixels() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1));
}

DepthHypotheses discretize_depths(const DepthMap& extended, double range_m,
                                  int per_side) {
  const auto offs = hypothesis_offsets(range_m, per_side);
  DepthHypotheses out(extended.dim(0), extended.dim(1), offs.size());
  for (std::size_t r = 0; r < extended.dim(0); ++r) {
    for (std::size_t c = 0; c < extended.dim(1); ++c) {
      const double d = extended(r, c);
      if (!(d > 0.0)) continue;
      auto slot = out.assign(r, c);
      for (std::size_t b = 0; b < offs.size(); ++b) {
        const double h = d + offs[b];
        slot[b] = h > kMinHypothesisDepth ? h : kClampedHypothesisDepth;
      }
    }
  }
  return out;
}

DepthHypotheses discretize_depths(const DepthMap& extended,
                                  const DiscretizationParams& params) {
  return discretize_depths(extended, params.range_m, params.per_side());
}

std::vector<VirtualPoint> make_virtual_points(const ImageFeatureMap& img,
                                              const DepthHypotheses& hyps,
                                              const Extrinsics& ex,
                                              const CameraIntrinsics& k) {
  const std::size_t rows = img.rows();
  const std::size_t cols = img.cols();
  if (img.depth_logits.dim(0) != rows || img.depth_logits.dim(1) != cols ||
      hyps.rows() != rows || hyps.cols() != cols) {
    throw std::invalid_argument("lift_to_bev: image/hypothesis shape mismatch");
  }
  if (img.hypotheses() != hyps.per_pixel()) {
    throw std::invalid_argument(
        "lift_to_bev: depth logit count differs from hypotheses per pixel");
  }
  const std::size_t per_pixel = hyps.per_pixel();

  // Row offsets into the output keep the row-major, hypothesis-minor order.
  std::vector<std::size_t> row_start(rows + 1, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols; ++c) n += hyps.has(r, c) ? per_pixel : 0;
    row_start[r + 1] = row_start[r] + n;
  }
  std::vector<VirtualPoint> points(row_start[rows]);

  parallel_for(0, rows, [&](std::size_t r0, std::size_t r1) {
    std::vector<double> w(per_pixel);
    for (std::size_t r = r0; r < r1; ++r) {
      std::size_t at = row_start[r];
      for (std::size_t c = 0; c < cols; ++c) {
        const auto depths = hyps.at(r, c);
        if (depths.empty()) continue;
        for (std::size_t b = 0; b < per_pixel; ++b) w[b] = img.depth_logits(r, c, b);
        softmax_inplace(w);
        for (std::size_t b = 0; b < per_pixel; ++b) {
          VirtualPoint& vp = points[at++];
          vp.row = static_cast<std::uint32_t>(r);
          vp.col = static_cast<std::uint32_t>(c);
          vp.hypothesis = static_cast<std::uint32_t>(b);
          vp.depth = depths[b];
          vp.weight = w[b];
          vp.position = back_project({c + 0.5, r + 0.5, depths[b]}, ex, k);
        }
      }
    }
  });
  return points;
}

BevFeatureMap bev_pool(std::span<const VirtualPoint> points,
                       const Tensor<double, 3>& features,
                       const BevGridSpec& spec) {
  spec.validate();
  const std::size_t channels = features.dim(0);
  if (spec.channels != 0 && spec.channels != channels) {
    throw std::invalid_argument("bev_pool: channel count differs from grid spec");
  }
  const std::size_t bev_rows = spec.rows();
  const std::size_t bev_cols = spec.cols();
  const std::size_t cells = bev_rows * bev_cols;
  constexpr std::size_t kDropped = static_cast<std::size_t>(-1);

  // Two-pass binning: rank every point, then counting-sort by cell (stable).
  std::vector<std::size_t> rank(points.size(), kDropped);
  parallel_for(0, points.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto cell = spec.cell_of(points[i].position.x, points[i].position.y);
      if (cell) rank[i] = cell->row * bev_cols + cell->col;
    }
  }, 4096);

  std::vector<std::size_t> start(cells + 1, 0);
  for (std::size_t r : rank) {
    if (r != kDropped) ++start[r + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) start[c + 1] += start[c];
  std::vector<std::size_t> order(start[cells]);
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < rank.size(); ++i) {
      if (rank[i] != kDropped) order[fill[rank[i]]++] = i;
    }
  }

  BevFeatureMap out({channels, bev_rows, bev_cols}, 0.0);
  parallel_for(0, cells, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t cell = lo; cell < hi; ++cell) {
      const std::size_t by = cell / bev_cols;
      const std::size_t bx = cell % bev_cols;
      for (std::size_t n = start[cell]; n < start[cell + 1]; ++n) {
        const VirtualPoint& vp = points[order[n]];
        for (std::size_t ch = 0; ch < channels; ++ch) {
          out(ch, by, bx) += vp.weight * features(ch, vp.row, vp.col);
        }
      }
    }
  }, 64);
  return out;
}

BevFeatureMap lift_to_bev(const ImageFeatureMap& img,
                          const DepthHypotheses& hyps, const Extrinsics& ex,
                          const CameraIntrinsics& k, const BevGridSpec& spec) {
  const auto points = make_virtual_points(img, hyps, ex, k);
  return bev_pool(points, img.features, spec);
}

std::size_t occupied_cells(const BevFeatureMap& bev) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < bev.dim(1); ++r) {
    for (std::size_t c = 0; c < bev.dim(2); ++c) {
      for (std::size_t ch = 0; ch < bev.dim(0); ++ch) {
        if (bev(ch, r, c) != 0.0) {
          ++n;
          break;
        }
      }
    }
  }
  return n;
}

}  // namespace occ
