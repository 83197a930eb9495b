#include "doctest.h"

#include <cmath>
#include <numbers>

#include "occ/error.hpp"
#include "occ/losses.hpp"
#include "occ/numeric.hpp"
#include "support.hpp"

using namespace occ;

namespace {

Grid2D<double> random_logits(Rng& rng, std::size_t n, std::size_t k, double s = 3.0) {
  Grid2D<double> l({n, k}, 0.0);
  for (auto& x : l.values()) x = rng.uniform(-s, s);
  return l;
}

std::vector<std::size_t> random_targets(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> t(n);
  for (auto& x : t) x = static_cast<std::size_t>(rng.uniform() * k);
  return t;
}

Grid2D<double> column_softmax(const Grid2D<double>& logits_kn) {
  Grid2D<double> p = logits_kn;
  const std::size_t k = p.dim(0), n = p.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> col(k);
    for (std::size_t c = 0; c < k; ++c) col[c] = p(c, i);
    softmax_inplace(col);
    for (std::size_t c = 0; c < k; ++c) p(c, i) = col[c];
  }
  return p;
}

template <typename F>
double max_fd_gap(Grid2D<double> x, const Grid2D<double>& grad, F&& f) {
  const double h = 1e-6;
  double worst = 0.0, scale = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double keep = x.values()[n];
    x.values()[n] = keep + h;
    const double up = f(x);
    x.values()[n] = keep - h;
    const double dn = f(x);
    x.values()[n] = keep;
    worst = std::max(worst, std::abs((up - dn) / (2 * h) - grad.values()[n]));
    scale = std::max(scale, std::abs(grad.values()[n]));
  }
  return worst / std::max(1.0, scale);
}

}  // namespace

TEST_CASE("cross_entropy: examples") {
  Grid2D<double> uniform({3, 4}, 0.7);
  const std::vector<std::size_t> t{0, 3, 2};
  CHECK(std::abs(cross_entropy(uniform, t).value - std::log(4.0)) < 1e-9);

  Grid2D<double> sharp({2, 3}, 0.0);
  sharp(0, 1) = 50.0;
  sharp(1, 2) = 50.0;
  const std::vector<std::size_t> st{1, 2};
  const double v = cross_entropy(sharp, st).value;
  CHECK(v >= 0.0);
  CHECK(v < 1e-9);

  CHECK_THROWS_AS(cross_entropy(Grid2D<double>({2, 1}, 0.0), std::vector<std::size_t>{0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<std::size_t>{0, 4, 1}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<std::size_t>{0, 1}), std::invalid_argument);
}

TEST_CASE("cross_entropy: direct evaluation and gradient") {
  Rng rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const auto l = random_logits(rng, 7, 5);
    const auto t = random_targets(rng, 7, 5);
    const auto r = cross_entropy(l, t);
    long double want = 0.0L;
    for (std::size_t i = 0; i < 7; ++i) {
      long double z = 0.0L;
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(static_cast<long double>(l(i, c)));
      want -= std::log(std::exp(static_cast<long double>(l(i, t[i]))) / z);
    }
    CHECK(std::abs(r.value - static_cast<double>(want / 7)) < 1e-12);
    CHECK(max_fd_gap(l, r.grad, [&](const Grid2D<double>& x) {
            return cross_entropy(x, t).value;
          }) < 1e-4);
  }
}

TEST_CASE("cross_entropy: stable for large logits") {
  Grid2D<double> l({1, 3}, std::vector<double>{1000.0, 999.0, -1000.0});
  const double v = cross_entropy(l, std::vector<std::size_t>{1}).value;
  CHECK(std::isfinite(v));
  CHECK(std::abs(v - (1.0 + std::log1p(std::exp(-1.0)))) < 1e-12);
}

TEST_CASE("masked_cross_entropy: examples and filtering oracle") {
  Rng rng(72);
  const auto l = random_logits(rng, 9, 4);
  const auto t = random_targets(rng, 9, 4);
  const std::vector<std::uint8_t> ones(9, 1), zeros(9, 0);
  CHECK(masked_cross_entropy(l, t, ones).value == cross_entropy(l, t).value);
  const auto z = masked_cross_entropy(l, t, zeros);
  CHECK(z.value == 0.0);
  for (double g : z.grad.values()) CHECK(g == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::uint8_t> m(9);
    for (auto& x : m) x = rng.uniform() < 0.5;
    std::vector<double> rows;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < 9; ++i) {
      if (!m[i]) continue;
      for (std::size_t c = 0; c < 4; ++c) rows.push_back(l(i, c));
      kept.push_back(t[i]);
    }
    const auto r = masked_cross_entropy(l, t, m);
    if (kept.empty()) {
      CHECK(r.value == 0.0);
      continue;
    }
    const Grid2D<double> filtered({kept.size(), 4}, rows);
    CHECK(std::abs(r.value - cross_entropy(filtered, kept).value) < 1e-12);
    CHECK(max_fd_gap(l, r.grad, [&](const Grid2D<double>& x) {
            return masked_cross_entropy(x, t, m).value;
          }) < 1e-4);
    for (std::size_t i = 0; i < 9; ++i)
      if (!m[i])
        for (std::size_t c = 0; c < 4; ++c) CHECK(r.grad(i, c) == 0.0);
  }
  CHECK_THROWS_AS(masked_cross_entropy(l, t, std::vector<std::uint8_t>(8, 1)),
                  std::invalid_argument);
}

TEST_CASE("lovasz_grad: Jaccard increments") {
  const std::vector<std::uint8_t> gt{1, 0, 1, 1, 0};
  const auto g = lovasz_grad(gt);
  REQUIRE(g.size() == 5);
  double prev = 0.0;
  std::vector<std::uint8_t> wrong(5, 0);
  for (std::size_t k = 0; k < 5; ++k) {
    wrong[k] = 1;
    const double cur = oracle::jaccard_loss(gt, wrong);
    CHECK(std::abs(g[k] - (cur - prev)) < 1e-15);
    prev = cur;
  }
}

TEST_CASE("lovasz_softmax: examples") {
  Grid2D<double> perfect({3, 4}, 0.0);
  const std::vector<std::size_t> t{0, 2, 1, 2};
  for (std::size_t i = 0; i < 4; ++i) perfect(t[i], i) = 1.0;
  CHECK(lovasz_softmax(perfect, t).value == 0.0);

  Grid2D<double> wrong({2, 1}, std::vector<double>{0.0, 1.0});
  CHECK(lovasz_softmax(wrong, std::vector<std::size_t>{0}).value == 1.0);

  Grid2D<double> bad({2, 2}, std::vector<double>{0.5, 0.5, 0.6, 0.5});
  CHECK_THROWS_AS(lovasz_softmax(bad, std::vector<std::size_t>{0, 1}), std::invalid_argument);
  Grid2D<double> neg({2, 1}, std::vector<double>{-0.1, 1.1});
  CHECK_THROWS_AS(lovasz_softmax(neg, std::vector<std::size_t>{0}), std::invalid_argument);
}

TEST_CASE("lovasz_softmax: permutation-definition oracle") {
  Rng rng(73);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + trial % 6;
    const std::size_t k = 2 + trial % 3;
    Grid2D<double> l({k, n}, 0.0);
    for (auto& x : l.values()) x = rng.uniform(-2, 2);
    const auto p = column_softmax(l);
    const auto t = random_targets(rng, n, k);
    const double got = lovasz_softmax(p, t).value;
    const double want = oracle::lovasz_softmax_oracle(p, t);
    CHECK(std::abs(got - want) < 1e-9);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("lovasz_softmax: gradient") {
  Rng rng(74);
  for (int trial = 0; trial < 10; ++trial) {
    Grid2D<double> l({3, 8}, 0.0);
    for (auto& x : l.values()) x = rng.uniform(-2, 2);
    const auto p = column_softmax(l);
    const auto t = random_targets(rng, 8, 3);
    const auto r = lovasz_softmax(p, t);
    // piecewise linear in p; unconstrained perturbations stay on one piece
    const double h = 1e-7;
    double worst = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) {
      auto up = p, dn = p;
      up.values()[n] += h;
      dn.values()[n] -= h;
      auto eval = [&](const Grid2D<double>& q) {
        // the loss is defined on the simplex; evaluate the same formula
        // through the class-wise errors, which is linear in each entry
        double total = 0.0;
        std::size_t present = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          std::vector<std::uint8_t> gt(8);
          std::vector<double> err(8);
          bool any = false;
          for (std::size_t i = 0; i < 8; ++i) {
            gt[i] = t[i] == c;
            any = any || gt[i];
            err[i] = std::abs((gt[i] ? 1.0 : 0.0) - q(c, i));
          }
          if (!any) continue;
          std::vector<std::size_t> order(8);
          std::iota(order.begin(), order.end(), 0);
          std::stable_sort(order.begin(), order.end(),
                           [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
          std::vector<std::uint8_t> sorted(8);
          for (std::size_t i = 0; i < 8; ++i) sorted[i] = gt[order[i]];
          const auto g = lovasz_grad(sorted);
          for (std::size_t i = 0; i < 8; ++i) total += err[order[i]] * g[i];
          ++present;
        }
        return total / present;
      };
      const double fd = (eval(up) - eval(dn)) / (2 * h);
      worst = std::max(worst, std::abs(fd - r.grad.values()[n]));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("total_loss: weights") {
  const LossWeights w;
  CHECK(total_loss({1, 1, 1, 1, 1}, w) == 3.55);
  CHECK(total_loss({0, 0, 0, 0, 0}, w) == 0.0);
  Rng rng(75);
  for (int trial = 0; trial < 20; ++trial) {
    const LossComponents c{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5),
                           rng.uniform(0, 5), rng.uniform(0, 5)};
    const LossWeights lw{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2),
                         rng.uniform(0, 2), rng.uniform(0, 2)};
    const Eigen::Matrix<double, 5, 1> a(c.depth, c.seg, c.pts, c.mask_occ, c.distill);
    const Eigen::Matrix<double, 5, 1> b(lw.lambda_depth, lw.lambda_seg, lw.lambda_pts,
                                        lw.lambda_mask_occ, lw.lambda_kl);
    CHECK(std::abs(total_loss(c, lw) - a.dot(b)) < 1e-12);
    // homogeneous in each component
    LossComponents c2 = c;
    c2.pts *= 3.0;
    CHECK(std::abs(total_loss(c2, lw) - total_loss(c, lw) - 2.0 * lw.lambda_pts * c.pts) < 1e-12);
  }
  CHECK_THROWS_AS(total_loss({std::nan(""), 0, 0, 0, 0}, w), std::invalid_argument);
  LossWeights neg;
  neg.lambda_seg = -0.5;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  CHECK(points_loss(0.25, 0.5) == 0.75);
}
