#include "doctest.h"

#include <cmath>
#include <map>

#include "occ/parallel.hpp"
#include "occ/view_transform.hpp"
#include "support.hpp"

using namespace occ;

namespace {

CameraIntrinsics small_k() { return {8.0, 8.0, 4.0, 4.0, 8, 8}; }

struct DiffusionCase {
  DepthMap depth;
  SemanticMask mask;
};

DiffusionCase random_diffusion_case(Rng& rng, std::size_t h, std::size_t w, int labels,
                                    double density) {
  DiffusionCase c{DepthMap({h, w}, 0.0), SemanticMask({h, w}, 0)};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      c.mask(i, j) = static_cast<std::uint16_t>(rng.uniform() * (labels + 1));
      if (rng.uniform() < density) c.depth(i, j) = rng.uniform(0.5, 40.0);
    }
  }
  return c;
}

Grid2D<std::uint8_t> measured(const DepthMap& d) {
  Grid2D<std::uint8_t> m({d.dim(0), d.dim(1)}, 0);
  for (std::size_t i = 0; i < d.size(); ++i) m.values()[i] = d.values()[i] > 0.0;
  return m;
}

ImageFeatureMap random_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                             std::size_t b) {
  ImageFeatureMap img;
  img.features = Tensor<double, 3>({c, h, w}, 0.0);
  img.depth_logits = Tensor<double, 3>({h, w, b}, 0.0);
  for (auto& x : img.features.values()) x = rng.uniform(0.0, 1.0);
  for (auto& x : img.depth_logits.values()) x = rng.uniform(-3.0, 3.0);
  return img;
}

}  // namespace

TEST_CASE("scatter_copoints: empty cloud") {
  const auto m = scatter_copoints({}, Extrinsics::identity(), small_k());
  for (double v : m.depth.values()) CHECK(v == 0.0);
  for (auto v : m.labels.values()) CHECK(v == 0);
}

TEST_CASE("scatter_copoints: single point on the principal ray") {
  const std::vector<LabeledPoint> pts{{{0.0, 0.0, 5.0}, 2}};
  const auto m = scatter_copoints(pts, Extrinsics::identity(), small_k());
  std::size_t nonzero = 0;
  for (double v : m.depth.values()) nonzero += v != 0.0;
  CHECK(nonzero == 1);
  CHECK(m.depth(4, 4) == 5.0);
  CHECK(m.labels(4, 4) == 2);
}

TEST_CASE("scatter_copoints: nearest depth wins, regardless of order") {
  const std::vector<LabeledPoint> a{{{0.0, 0.0, 4.0}, 1}, {{0.0, 0.0, 2.0}, 3}};
  const std::vector<LabeledPoint> b{{{0.0, 0.0, 2.0}, 3}, {{0.0, 0.0, 4.0}, 1}};
  for (const auto& pts : {a, b}) {
    const auto m = scatter_copoints(pts, Extrinsics::identity(), small_k());
    CHECK(m.depth(4, 4) == 2.0);
    CHECK(m.labels(4, 4) == 3);
  }
}

TEST_CASE("scatter_copoints: matches sort-by-depth scatter") {
  Rng rng(21);
  const CameraIntrinsics k{30.0, 30.0, 16.0, 12.0, 32, 24};
  for (int trial = 0; trial < 20; ++trial) {
    const auto ex = oracle::random_extrinsics(rng, 0.5);
    std::vector<LabeledPoint> pts;
    for (int i = 0; i < 3000; ++i) {
      pts.push_back({{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)},
                     static_cast<std::uint16_t>(1 + rng.uniform() * 3)});
    }
    // oracle: write in decreasing-depth order so the nearest lands last
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (const auto pd = oracle::project_homogeneous(pts[i].position, ex, k))
        order.push_back({pd->depth, i});
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    DepthMap expect({24, 32}, 0.0);
    for (const auto& [d, i] : order) {
      const auto pd = oracle::project_homogeneous(pts[i].position, ex, k);
      expect(static_cast<std::size_t>(std::floor(pd->v)),
             static_cast<std::size_t>(std::floor(pd->u))) = d;
    }
    const auto got = scatter_copoints(pts, ex, k);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(got.depth.values()[i] - expect.values()[i]) < 1e-9);
    }
  }
}

TEST_CASE("diffuse_depth: radius 0 restricts to the mask") {
  Rng rng(22);
  const auto c = random_diffusion_case(rng, 12, 10, 3, 0.4);
  const auto out = diffuse_depth(c.depth, c.mask, 0);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 10; ++j)
      CHECK(out(i, j) == (c.mask(i, j) != 0 ? c.depth(i, j) : 0.0));
}

TEST_CASE("diffuse_depth: single sample fills its disk") {
  DepthMap d({5, 5}, 0.0);
  SemanticMask m({5, 5}, 1);
  d(2, 2) = 3.0;
  const auto out = diffuse_depth(d, m, 2);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const int r2 = (i - 2) * (i - 2) + (j - 2) * (j - 2);
      CHECK(out(i, j) == (r2 <= 4 ? 3.0 : 0.0));
    }
  }
}

TEST_CASE("diffuse_depth: mean over same-label measurements only") {
  DepthMap d({1, 5}, 0.0);
  SemanticMask m({1, 5}, 0);
  m(0, 0) = 1; d(0, 0) = 2.0;
  m(0, 1) = 1;
  m(0, 2) = 1; d(0, 2) = 4.0;
  m(0, 3) = 2; d(0, 3) = 100.0;
  m(0, 4) = 0; d(0, 4) = 7.0;
  const auto out = diffuse_depth(d, m, 3);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(0, 1) == 3.0);
  CHECK(out(0, 2) == 4.0);
  CHECK(out(0, 3) == 100.0);
  CHECK(out(0, 4) == 0.0);
}

TEST_CASE("diffuse_depth: matches brute-force evaluation") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const int r = trial % 6;
    const auto c = random_diffusion_case(rng, 16, 16, 1 + trial % 4, 0.05 + 0.01 * trial);
    const auto got = diffuse_depth(c.depth, c.mask, r);
    const auto want = oracle::diffuse_brute(c.depth, c.mask, r);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got.values()[i] - want.values()[i]) < 1e-9);
    }
  }
}

TEST_CASE("diffuse_depth: invariants") {
  Rng rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    const auto c = random_diffusion_case(rng, 20, 17, 3, 0.1);
    const int r = 1 + trial % 5;
    const auto out = diffuse_depth(c.depth, c.mask, r);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto label = c.mask.values()[i];
      if (label == 0) CHECK(out.values()[i] == 0.0);
      else if (c.depth.values()[i] > 0.0) CHECK(out.values()[i] == c.depth.values()[i]);
      CHECK(out.values()[i] >= 0.0);
    }
    // idempotent when the co-point set is held fixed
    const auto again = diffuse_depth(out, c.mask, r, measured(c.depth));
    CHECK(again == out);
  }
  CHECK_THROWS_AS(diffuse_depth(DepthMap({2, 2}, 0.0), SemanticMask({2, 2}, 0), -1),
                  std::invalid_argument);
  CHECK_THROWS_AS(diffuse_depth(DepthMap({2, 2}, 0.0), SemanticMask({2, 3}, 0), 1),
                  std::invalid_argument);
}

TEST_CASE("diffuse_depth: identical across thread counts") {
  Rng rng(25);
  const auto c = random_diffusion_case(rng, 64, 48, 4, 0.08);
  set_thread_count(1);
  const auto a = diffuse_depth(c.depth, c.mask, 5);
  set_thread_count(4);
  const auto b = diffuse_depth(c.depth, c.mask, 5);
  set_thread_count(0);
  CHECK(a == b);
}

TEST_CASE("hypothesis_offsets: schedule") {
  const auto one = hypothesis_offsets(1.0, 1);
  REQUIRE(one.size() == 2);
  CHECK(one[0] == -0.5);
  CHECK(one[1] == 0.5);
  for (int n = 1; n <= 12; ++n) {
    const double range = 0.25 * n;
    const auto off = hypothesis_offsets(range, n);
    REQUIRE(off.size() == static_cast<std::size_t>(2 * n));
    for (int k = 1; k <= n; ++k) {
      const double want = 0.5 * range * k * (k + 1) / (n * (n + 1.0));
      CHECK(std::abs(off[n - 1 + k] - want) < 1e-15);
      CHECK(off[n - k] == -off[n - 1 + k]);
    }
    CHECK(std::abs(off.back() - range / 2) < 1e-15);
  }
  CHECK_THROWS_AS(hypothesis_offsets(1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(hypothesis_offsets(0.0, 2), std::invalid_argument);
}

TEST_CASE("discretize_depths: examples") {
  DepthMap d({1, 2}, 0.0);
  d(0, 0) = 10.0;
  const auto one = discretize_depths(d, 1.0, 1);
  REQUIRE(one.has(0, 0));
  CHECK(one.at(0, 0)[0] == 9.5);
  CHECK(one.at(0, 0)[1] == 10.5);
  CHECK_FALSE(one.has(0, 1));
  CHECK(one.at(0, 1).empty());
  CHECK(one.active_pixels() == 1);

  const auto eight = discretize_depths(d, 1.0, 8);
  const auto h = eight.at(0, 0);
  REQUIRE(h.size() == 16);
  for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] > h[i - 1]);
  // gaps grow away from the centre on both sides
  for (std::size_t i = 9; i + 1 < h.size(); ++i) CHECK(h[i + 1] - h[i] > h[i] - h[i - 1]);
  for (std::size_t i = 1; i + 1 < 8; ++i) CHECK(h[i] - h[i - 1] > h[i + 1] - h[i]);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs((h[15 - i] - 10.0) - (10.0 - h[i])) < 1e-12);
  CHECK_THROWS_AS(discretize_depths(d, 1.0, 0), std::invalid_argument);
}

TEST_CASE("discretize_depths: clamp floor") {
  DepthMap d({1, 1}, 0.2);
  const auto h = discretize_depths(d, 1.0, 8);
  for (double x : h.at(0, 0)) CHECK(x > kMinHypothesisDepth);
}

TEST_CASE("discretization params: layers meaning") {
  DiscretizationParams p;
  CHECK(p.per_pixel() == 16);
  p.meaning = LayersMeaning::total;
  CHECK(p.per_pixel() == 8);
  p.layers = 7;
  CHECK_THROWS_AS(p.per_side(), std::invalid_argument);
}

TEST_CASE("lift_to_bev: single pixel single hypothesis") {
  const CameraIntrinsics k{1.0, 1.0, 0.5, 0.5, 1, 1};
  ImageFeatureMap img;
  img.features = Tensor<double, 3>({3, 1, 1}, std::vector<double>{0.25, -1.0, 2.0});
  img.depth_logits = Tensor<double, 3>({1, 1, 1}, 0.7);
  DepthHypotheses hyps(1, 1, 1);
  hyps.assign(0, 0)[0] = 2.0;
  // camera looks along +x of the BEV frame: rows of R are (0,-1,0),(0,0,-1),(1,0,0)
  Extrinsics ex;
  ex.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  BevGridSpec spec{-4.0, 4.0, -4.0, 4.0, 1.0, 0};
  const auto bev = lift_to_bev(img, hyps, ex, k, spec);
  std::size_t nonzero_cells = 0;
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      bool any = false;
      for (std::size_t ch = 0; ch < 3; ++ch) any = any || bev(ch, r, c) != 0.0;
      nonzero_cells += any;
    }
  }
  CHECK(nonzero_cells == 1);
  // point (2, 0, 0) falls in column 6, row 4
  CHECK(bev(0, 4, 6) == 0.25);
  CHECK(bev(1, 4, 6) == -1.0);
  CHECK(bev(2, 4, 6) == 2.0);
}

TEST_CASE("lift_to_bev: all points out of range") {
  Rng rng(26);
  const CameraIntrinsics k{10.0, 10.0, 5.0, 5.0, 10, 10};
  const auto img = random_image(rng, 2, 10, 10, 4);
  DepthHypotheses hyps(10, 10, 4);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 10; ++c) {
      auto h = hyps.assign(r, c);
      for (std::size_t b = 0; b < 4; ++b) h[b] = 100.0 + b;
    }
  const auto bev = lift_to_bev(img, hyps, Extrinsics::identity(), k, {-4, 4, -4, 4, 0.5, 0});
  for (double v : bev.values()) CHECK(v == 0.0);
}

TEST_CASE("make_virtual_points: weights are a softmax per pixel") {
  Rng rng(27);
  const CameraIntrinsics k{12.0, 12.0, 6.0, 5.0, 12, 10};
  const auto img = random_image(rng, 3, 10, 12, 6);
  DepthMap d({10, 12}, 0.0);
  for (auto& x : d.values()) x = rng.uniform() < 0.7 ? rng.uniform(1.0, 8.0) : 0.0;
  const auto hyps = discretize_depths(d, 1.0, 3);
  const auto pts = make_virtual_points(img, hyps, Extrinsics::identity(), k);
  CHECK(pts.size() == hyps.active_pixels() * 6);
  std::map<std::pair<int, int>, double> sums;
  for (const auto& p : pts) {
    sums[{static_cast<int>(p.row), static_cast<int>(p.col)}] += p.weight;
    // independent softmax
    double z = 0.0;
    for (std::size_t b = 0; b < 6; ++b) z += std::exp(img.depth_logits(p.row, p.col, b));
    CHECK(std::abs(p.weight - std::exp(img.depth_logits(p.row, p.col, p.hypothesis)) / z) < 1e-12);
    CHECK(p.depth == hyps.at(p.row, p.col)[p.hypothesis]);
  }
  for (const auto& [px, s] : sums) CHECK(std::abs(s - 1.0) < 1e-6);
  // ordering: row-major pixels, then hypotheses
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto a = std::make_tuple(pts[i - 1].row, pts[i - 1].col, pts[i - 1].hypothesis);
    const auto b = std::make_tuple(pts[i].row, pts[i].col, pts[i].hypothesis);
    CHECK(a < b);
  }
  DepthHypotheses wrong(10, 12, 5);
  CHECK_THROWS_AS(make_virtual_points(img, wrong, Extrinsics::identity(), k),
                  std::invalid_argument);
}

TEST_CASE("lift_to_bev: conservation against a per-point loop") {
  Rng rng(28);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraIntrinsics k{20.0, 20.0, 10.0, 8.0, 20, 16};
    const auto img = random_image(rng, 4, 16, 20, 8);
    const auto ex = oracle::random_extrinsics(rng, 1.0);
    DepthMap d({16, 20}, 0.0);
    for (auto& x : d.values()) x = rng.uniform() < 0.8 ? rng.uniform(0.5, 6.0) : 0.0;
    const auto hyps = discretize_depths(d, 1.0, 4);
    const BevGridSpec spec{-3.0, 3.0, -2.0, 4.0, 0.5, 0};
    const auto bev = lift_to_bev(img, hyps, ex, k, spec);

    // naive: explicit inverse matrices, softmax without max shift
    const Eigen::Matrix3d kinv = k.matrix().inverse();
    Tensor<double, 3> want({4, spec.rows(), spec.cols()}, 0.0);
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 20; ++c) {
        const auto hs = hyps.at(r, c);
        if (hs.empty()) continue;
        double z = 0.0;
        for (std::size_t b = 0; b < 8; ++b) z += std::exp(img.depth_logits(r, c, b));
        for (std::size_t b = 0; b < 8; ++b) {
          const double w = std::exp(img.depth_logits(r, c, b)) / z;
          const Eigen::Vector3d pc = kinv * Eigen::Vector3d(c + 0.5, r + 0.5, 1.0) * hs[b];
          const Eigen::Vector3d p = ex.rotation.inverse() * (pc - ex.translation);
          const double fx = (p.x() - spec.x_min) / spec.cell;
          const double fy = (p.y() - spec.y_min) / spec.cell;
          if (fx < 0 || fy < 0 || fx >= spec.cols() || fy >= spec.rows()) continue;
          for (std::size_t ch = 0; ch < 4; ++ch) {
            want(ch, static_cast<std::size_t>(fy), static_cast<std::size_t>(fx)) +=
                w * img.features(ch, r, c);
          }
        }
      }
    }
    double sum_got = 0.0, sum_want = 0.0;
    for (std::size_t i = 0; i < bev.size(); ++i) {
      CHECK(std::abs(bev.values()[i] - want.values()[i]) < 1e-9);
      sum_got += bev.values()[i];
      sum_want += want.values()[i];
    }
    CHECK(std::abs(sum_got - sum_want) <= 1e-6 * std::max(1.0, std::abs(sum_want)));
  }
}

TEST_CASE("lift_to_bev: bit-identical across thread counts") {
  Rng rng(29);
  const CameraIntrinsics k{40.0, 40.0, 20.0, 15.0, 40, 30};
  const auto img = random_image(rng, 5, 30, 40, 16);
  DepthMap d({30, 40}, 0.0);
  for (auto& x : d.values()) x = rng.uniform(0.5, 5.0);
  const auto hyps = discretize_depths(d, 1.0, 8);
  Extrinsics ex;
  ex.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  const BevGridSpec spec{-4, 4, -4, 4, 0.4, 0};
  set_thread_count(1);
  const auto a = lift_to_bev(img, hyps, ex, k, spec);
  set_thread_count(4);
  const auto b = lift_to_bev(img, hyps, ex, k, spec);
  set_thread_count(7);
  const auto c = lift_to_bev(img, hyps, ex, k, spec);
  set_thread_count(0);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("bev_pool: per-cell order is input order") {
  // three points in one cell; the float sum depends on order
  Tensor<double, 3> f({1, 1, 3}, std::vector<double>{1e16, 1.0, -1e16});
  std::vector<VirtualPoint> pts(3);
  for (std::uint32_t i = 0; i < 3; ++i) {
    pts[i].row = 0;
    pts[i].col = i;
    pts[i].weight = 1.0;
    pts[i].position = {0.1, 0.1, 0.0};
  }
  const auto bev = bev_pool(pts, f, {0.0, 1.0, 0.0, 1.0, 1.0, 0});
  CHECK(bev(0, 0, 0) == (1e16 + 1.0) - 1e16);
}

TEST_CASE("occupied_cells counts non-zero columns") {
  BevFeatureMap m({2, 3, 3}, 0.0);
  CHECK(occupied_cells(m) == 0);
  m(1, 2, 2) = -1.0;
  m(0, 0, 1) = 3.0;
  m(1, 0, 1) = 3.0;
  CHECK(occupied_cells(m) == 2);
}
