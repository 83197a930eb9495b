#include "occ/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "occ/error.hpp"
#include "occ/numeric.hpp"

namespace occ {
namespace {

void check_logits(const Grid2D<double>& logits, std::size_t n_targets) {
  if (logits.dim(1) < 2) throw std::invalid_argument("cross_entropy: need K >= 2");
  if (logits.dim(0) != n_targets) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
}

// Adds the CE term of row i (scaled by `scale`) to grad and returns -log p.
double row_cross_entropy(const Grid2D<double>& logits, std::size_t i,
                         std::size_t target, double scale, Grid2D<double>& grad) {
  const std::size_t k = logits.dim(1);
  if (target >= k) throw std::invalid_argument("cross_entropy: target out of range");
  const auto row = logits.values().subspan(i * k, k);
  const double lse = log_sum_exp(row);
  for (std::size_t j = 0; j < k; ++j) {
    grad(i, j) = scale * (std::exp(row[j] - lse) - (j == target ? 1.0 : 0.0));
  }
  return lse - row[target];
}

}  // namespace

LossResult cross_entropy(const Grid2D<double>& logits,
                         std::span<const std::size_t> targets) {
  check_logits(logits, targets.size());
  const std::size_t n = targets.size();
  LossResult out{0.0, Grid2D<double>(logits.shape(), 0.0)};
  if (n == 0) return out;
  std::vector<double> terms(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    terms[i] = row_cross_entropy(logits, i, targets[i], scale, out.grad);
  }
  out.value = pairwise_sum(terms) / static_cast<double>(n);
  return out;
}

LossResult masked_cross_entropy(const Grid2D<double>& logits,
                                std::span<const std::size_t> targets,
                                std::span<const std::uint8_t> mask) {
  check_logits(logits, targets.size());
  if (mask.size() != targets.size()) {
    throw std::invalid_argument("masked_cross_entropy: mask size mismatch");
  }
  LossResult out{0.0, Grid2D<double>(logits.shape(), 0.0)};
  const auto active =
      static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(),
                                             [](std::uint8_t m) { return m != 0; }));
  if (active == 0) return out;
  const double scale = 1.0 / static_cast<double>(active);
  std::vector<double> terms;
  terms.reserve(active);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (mask[i] == 0) continue;
    terms.push_back(row_cross_entropy(logits, i, targets[i], scale, out.grad));
  }
  out.value = pairwise_sum(terms) / static_cast<double>(active);
  return out;
}

std::vector<double> lovasz_grad(std::span<const std::uint8_t> gt_sorted) {
  const std::size_t n = gt_sorted.size();
  std::vector<double> g(n);
  double gts = 0.0;
  for (auto v : gt_sorted) gts += v;
  double cum_fg = 0.0;
  double cum_bg = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_fg += gt_sorted[i];
    cum_bg += 1.0 - gt_sorted[i];
    const double inter = gts - cum_fg;
    const double uni = gts + cum_bg;
    const double jaccard = 1.0 - inter / uni;
    g[i] = jaccard - prev;
    prev = jaccard;
  }
  return g;
}

LossResult lovasz_softmax(const Grid2D<double>& probabilities,
                          std::span<const std::size_t> targets) {
  const std::size_t classes = probabilities.dim(0);
  const std::size_t n = probabilities.dim(1);
  if (targets.size() != n) throw std::invalid_argument("lovasz: target count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = probabilities(c, i);
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw std::invalid_argument("lovasz: probabilities must be finite and >= 0");
      }
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("lovasz: probability columns must sum to 1");
    }
    if (targets[i] >= classes) throw std::invalid_argument("lovasz: target out of range");
  }

  LossResult out{0.0, Grid2D<double>(probabilities.shape(), 0.0)};
  std::vector<double> per_class;
  std::vector<double> errors(n);
  std::vector<std::size_t> order(n);
  std::vector<std::uint8_t> gt_sorted(n);
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < classes; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = targets[i] == c;
      any = any || fg;
      errors[i] = std::abs((fg ? 1.0 : 0.0) - probabilities(c, i));
    }
    if (!any) continue;
    present.push_back(c);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    for (std::size_t i = 0; i < n; ++i) gt_sorted[i] = targets[order[i]] == c;
    const auto g = lovasz_grad(gt_sorted);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      loss += errors[order[i]] * g[i];
      // d|fg - p| / dp = -1 on foreground, +1 on background.
      out.grad(c, order[i]) = gt_sorted[i] ? -g[i] : g[i];
    }
    per_class.push_back(loss);
  }
  if (present.empty()) return out;
  const double inv = 1.0 / static_cast<double>(present.size());
  out.value = pairwise_sum(per_class) * inv;
  for (double& g : out.grad.values()) g *= inv;
  return out;
}

void LossWeights::validate() const {
  for (double v : {lambda_depth, lambda_seg, lambda_pts, lambda_mask_occ, lambda_kl}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("loss weights must be finite and >= 0");
    }
  }
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  for (double v : {c.depth, c.seg, c.pts, c.mask_occ, c.distill}) {
    if (!std::isfinite(v)) throw std::invalid_argument("total_loss: non-finite component");
  }
  return w.lambda_depth * c.depth + w.lambda_seg * c.seg + w.lambda_pts * c.pts +
         w.lambda_mask_occ * c.mask_occ + w.lambda_kl * c.distill;
}

}  // namespace occ
