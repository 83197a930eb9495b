#pragma once

// Independent reference implementations used as test oracles. They favour
// the most literal formulation over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "occ/fusion.hpp"
#include "occ/geometry.hpp"
#include "occ/random.hpp"
#include "occ/tensor.hpp"
#include "occ/view_transform.hpp"

namespace oracle {

using occ::Grid2D;
using occ::Tensor;

inline Eigen::Matrix3d random_rotation(occ::Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline occ::Extrinsics random_extrinsics(occ::Rng& rng, double t = 2.0) {
  occ::Extrinsics e;
  e.rotation = random_rotation(rng);
  e.translation = {rng.uniform(-t, t), rng.uniform(-t, t), rng.uniform(-t, t)};
  return e;
}

inline occ::CameraIntrinsics random_intrinsics(occ::Rng& rng) {
  occ::CameraIntrinsics k;
  k.width = 64 + static_cast<int>(rng.uniform() * 600);
  k.height = 48 + static_cast<int>(rng.uniform() * 400);
  k.fx = rng.uniform(50.0, 800.0);
  k.fy = rng.uniform(50.0, 800.0);
  k.cx = rng.uniform(0.0, k.width - 1.0);
  k.cy = rng.uniform(0.0, k.height - 1.0);
  return k;
}

// Explicit homogeneous pipeline: [u*Z, v*Z, Z]^T = K [R | t] [x y z 1]^T.
inline std::optional<occ::PixelDepth> project_homogeneous(const occ::Point3& p,
                                                          const occ::Extrinsics& ex,
                                                          const occ::CameraIntrinsics& k) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.block<3, 3>(0, 0) = ex.rotation;
  rt.col(3) = ex.translation;
  const Eigen::Matrix<double, 3, 4> proj = k.matrix() * rt;
  const Eigen::Vector4d h(p.x, p.y, p.z, 1.0);
  const Eigen::Vector3d q = proj * h;
  const double z = q.z();
  if (z <= 1e-6) return std::nullopt;
  const double u = q.x() / z;
  const double v = q.y() / z;
  if (u < 0.0 || v < 0.0 || u >= k.width || v >= k.height) return std::nullopt;
  return occ::PixelDepth{u, v, z};
}

// Masked diffusion evaluated directly: every pixel against every other pixel.
inline occ::DepthMap diffuse_brute(const occ::DepthMap& d, const occ::SemanticMask& m, int r) {
  const long h = static_cast<long>(d.dim(0));
  const long w = static_cast<long>(d.dim(1));
  occ::DepthMap out({d.dim(0), d.dim(1)}, 0.0);
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) {
      const auto label = m(i, j);
      if (label == 0) continue;
      if (d(i, j) > 0.0) {
        out(i, j) = d(i, j);
        continue;
      }
      long double sum = 0.0L;
      long n = 0;
      for (long p = 0; p < h; ++p) {
        for (long q = 0; q < w; ++q) {
          const long di = p - i;
          const long dj = q - j;
          if (di * di + dj * dj > static_cast<long>(r) * r) continue;
          if (m(p, q) != label || !(d(p, q) > 0.0)) continue;
          sum += d(p, q);
          ++n;
        }
      }
      out(i, j) = n ? static_cast<double>(sum / n) : 0.0;
    }
  }
  return out;
}

// Dense attention over all positions with an additive -inf mask outside the
// k x k window, using Eigen matrix products.
inline occ::BevFeatureMap masked_dense_attention(const occ::BevFeatureMap& src,
                                                 const occ::BevFeatureMap& cross,
                                                 const occ::AttentionParams& p) {
  const long h = static_cast<long>(src.dim(1));
  const long w = static_cast<long>(src.dim(2));
  const long n = h * w;
  const long ms = static_cast<long>(src.dim(0));
  const long mc = static_cast<long>(cross.dim(0));
  Eigen::MatrixXd S(n, ms), X(n, mc);
  for (long c = 0; c < ms; ++c)
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) S(i * w + j, c) = src(c, i, j);
  for (long c = 0; c < mc; ++c)
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) X(i * w + j, c) = cross(c, i, j);
  auto to_eigen = [](const Grid2D<double>& g) {
    Eigen::MatrixXd m(g.dim(0), g.dim(1));
    for (std::size_t r = 0; r < g.dim(0); ++r)
      for (std::size_t c = 0; c < g.dim(1); ++c) m(r, c) = g(r, c);
    return m;
  };
  const Eigen::MatrixXd Q = S * to_eigen(p.query_proj);
  const Eigen::MatrixXd K = X * to_eigen(p.key_proj);
  const Eigen::MatrixXd V = X * to_eigen(p.value_proj);
  const double denom = std::sqrt(static_cast<double>(
      p.scale == occ::AttentionScale::value_dim ? V.cols() : Q.cols()));
  Eigen::MatrixXd L = Q * K.transpose();
  const long half = p.window / 2;
  for (long a = 0; a < n; ++a) {
    for (long b = 0; b < n; ++b) {
      const long di = b / w - a / w;
      const long dj = b % w - a % w;
      if (std::abs(di) > half || std::abs(dj) > half) {
        L(a, b) = -std::numeric_limits<double>::infinity();
      } else {
        L(a, b) = (L(a, b) + p.rel_bias(di + p.window - 1, dj + p.window - 1)) / denom;
      }
    }
  }
  Eigen::MatrixXd A(n, n);
  for (long a = 0; a < n; ++a) {
    const double mx = L.row(a).maxCoeff();
    Eigen::ArrayXd e = (L.row(a).array() - mx).exp();
    A.row(a) = (e / e.sum()).matrix().transpose();
  }
  const Eigen::MatrixXd O = A * V;
  occ::BevFeatureMap out({static_cast<std::size_t>(V.cols()), src.dim(1), src.dim(2)}, 0.0);
  for (long c = 0; c < V.cols(); ++c)
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) out(c, i, j) = O(i * w + j, c);
  return out;
}

inline occ::AttentionParams random_attention(occ::Rng& rng, std::size_t ms, std::size_t mc,
                                             std::size_t q, std::size_t v, int k) {
  occ::AttentionParams p;
  p.window = k;
  auto fill = [&](std::size_t r, std::size_t c) {
    Grid2D<double> g({r, c}, 0.0);
    for (auto& x : g.values()) x = rng.uniform(-1.0, 1.0);
    return g;
  };
  p.query_proj = fill(ms, q);
  p.key_proj = fill(mc, q);
  p.value_proj = fill(mc, v);
  const auto span = static_cast<std::size_t>(2 * k - 1);
  p.rel_bias = fill(span, span);
  return p;
}

inline occ::BevFeatureMap random_map(occ::Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                                     double sparsity = 0.0) {
  occ::BevFeatureMap m({c, h, w}, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (rng.uniform() < sparsity) continue;
      for (std::size_t k = 0; k < c; ++k) m(k, i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  return m;
}

// Jaccard loss of a set of mispredicted pixels for one class.
inline double jaccard_loss(const std::vector<std::uint8_t>& gt,
                           const std::vector<std::uint8_t>& wrong) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g = gt[i] != 0;
    const bool m = wrong[i] != 0;
    if (g && !m) ++inter;
    if (g || m) ++uni;
  }
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

// Lovasz extension of the (submodular) Jaccard loss at error vector e:
// the maximum over all orderings of the greedy marginal-gain sum.
inline double lovasz_extension_by_permutation(const std::vector<double>& err,
                                              const std::vector<std::uint8_t>& gt) {
  const std::size_t n = err.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    std::vector<std::uint8_t> wrong(n, 0);
    double prev = 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      wrong[perm[k]] = 1;
      const double cur = jaccard_loss(gt, wrong);
      sum += err[perm[k]] * (cur - prev);
      prev = cur;
    }
    best = std::max(best, sum);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double lovasz_softmax_oracle(const Grid2D<double>& probs,
                                    const std::vector<std::size_t>& targets) {
  const std::size_t k = probs.dim(0);
  const std::size_t n = probs.dim(1);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::uint8_t> gt(n);
    std::vector<double> err(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = targets[i] == c;
      any = any || gt[i];
      err[i] = std::abs((gt[i] ? 1.0 : 0.0) - probs(c, i));
    }
    if (!any) continue;
    total += lovasz_extension_by_permutation(err, gt);
    ++present;
  }
  return present ? total / static_cast<double>(present) : 0.0;
}

template <typename F>
double relative_gap(double analytic, F&& numeric) {
  const double fd = numeric();
  return std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
}

}  // namespace oracle
