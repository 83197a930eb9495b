#include "occ/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "occ/numeric.hpp"
#include "occ/parallel.hpp"

namespace occ {
namespace {

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// rows*cols x out_dim projection of a C x H x W map through a C x out_dim matrix.
std::vector<double> project_features(const BevFeatureMap& f,
                                     const Grid2D<double>& proj) {
  const std::size_t channels = f.dim(0);
  const std::size_t cells = f.dim(1) * f.dim(2);
  const std::size_t out_dim = proj.dim(1);
  std::vector<double> out(cells * out_dim, 0.0);
  parallel_for(0, cells, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t cell = lo; cell < hi; ++cell) {
      double* dst = &out[cell * out_dim];
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double x = f.values()[ch * cells + cell];
        if (x == 0.0) continue;
        for (std::size_t o = 0; o < out_dim; ++o) dst[o] += x * proj(ch, o);
      }
    }
  }, 256);
  return out;
}

struct Projected {
  std::vector<double> q;
  std::vector<double> k;
  std::vector<double> v;
};

void check_inputs(const BevFeatureMap& source, const BevFeatureMap& cross,
                  const AttentionParams& p) {
  p.validate();
  if (source.dim(1) != cross.dim(1) || source.dim(2) != cross.dim(2)) {
    throw std::invalid_argument("neighborhood_attention: spatial size mismatch");
  }
  if (source.dim(0) != p.query_proj.dim(0)) {
    throw std::invalid_argument(
        "neighborhood_attention: source channels differ from query projection");
  }
  if (cross.dim(0) != p.key_proj.dim(0)) {
    throw std::invalid_argument(
        "neighborhood_attention: cross channels differ from key projection");
  }
}

double logit_scale(const AttentionParams& p) {
  const std::size_t d =
      p.scale == AttentionScale::value_dim ? p.value_dim() : p.query_dim();
  return 1.0 / std::sqrt(static_cast<double>(d));
}

// Fills `logits` for the in-bounds window of (row, col); returns the window
// bounds through lo/hi.
void window_logits(const Projected& pr, const AttentionParams& p,
                   std::size_t rows, std::size_t cols, std::size_t row,
                   std::size_t col, double scale, std::vector<double>& logits,
                   long& r_lo, long& r_hi, long& c_lo, long& c_hi) {
  const long half = p.window / 2;
  const std::size_t qd = p.query_dim();
  r_lo = std::max<long>(0, static_cast<long>(row) - half);
  r_hi = std::min<long>(static_cast<long>(rows) - 1, static_cast<long>(row) + half);
  c_lo = std::max<long>(0, static_cast<long>(col) - half);
  c_hi = std::min<long>(static_cast<long>(cols) - 1, static_cast<long>(col) + half);
  const double* q = &pr.q[(row * cols + col) * qd];
  logits.clear();
  for (long r = r_lo; r <= r_hi; ++r) {
    for (long c = c_lo; c <= c_hi; ++c) {
      const double* k = &pr.k[(static_cast<std::size_t>(r) * cols + c) * qd];
      double dot = 0.0;
      for (std::size_t d = 0; d < qd; ++d) dot += q[d] * k[d];
      const long bi = r - static_cast<long>(row) + p.window - 1;
      const long bj = c - static_cast<long>(col) + p.window - 1;
      logits.push_back((dot + p.rel_bias(bi, bj)) * scale);
    }
  }
}

Projected project_all(const BevFeatureMap& source, const BevFeatureMap& cross,
                      const AttentionParams& p) {
  return {project_features(source, p.query_proj),
          project_features(cross, p.key_proj),
          project_features(cross, p.value_proj)};
}

}  // namespace

void AttentionParams::validate() const {
  if (window < 1 || window % 2 == 0) {
    throw std::invalid_argument("attention: window must be a positive odd integer");
  }
  if (query_proj.dim(1) != key_proj.dim(1)) {
    throw std::invalid_argument("attention: query and key dims differ");
  }
  if (key_proj.dim(0) != value_proj.dim(0)) {
    throw std::invalid_argument("attention: key and value input dims differ");
  }
  if (query_dim() == 0 || value_dim() == 0) {
    throw std::invalid_argument("attention: empty projection");
  }
  const auto span = static_cast<std::size_t>(2 * window - 1);
  if (rel_bias.dim(0) != span || rel_bias.dim(1) != span) {
    throw std::invalid_argument("attention: relative bias must be (2k-1) x (2k-1)");
  }
  if (!all_finite(query_proj.values()) || !all_finite(key_proj.values()) ||
      !all_finite(value_proj.values()) || !all_finite(rel_bias.values())) {
    throw std::invalid_argument("attention: non-finite parameters");
  }
}

void GateParams::validate(std::size_t channels) const {
  if (weights.dim(0) != channels || weights.dim(1) != channels ||
      bias.size() != channels) {
    throw std::invalid_argument("gate: parameter shape does not match channels");
  }
  if (!all_finite(weights.values()) || !all_finite(bias)) {
    throw std::invalid_argument("gate: non-finite parameters");
  }
}

BevFeatureMap neighborhood_attention(const BevFeatureMap& source,
                                     const BevFeatureMap& cross,
                                     const AttentionParams& p) {
  check_inputs(source, cross, p);
  const std::size_t rows = source.dim(1);
  const std::size_t cols = source.dim(2);
  const std::size_t vd = p.value_dim();
  const std::size_t cells = rows * cols;
  const double scale = logit_scale(p);
  const Projected pr = project_all(source, cross, p);

  BevFeatureMap out({vd, rows, cols}, 0.0);
  parallel_for(0, rows, [&](std::size_t r0, std::size_t r1) {
    std::vector<double> logits;
    std::vector<double> acc(vd);
    for (std::size_t row = r0; row < r1; ++row) {
      for (std::size_t col = 0; col < cols; ++col) {
        long r_lo, r_hi, c_lo, c_hi;
        window_logits(pr, p, rows, cols, row, col, scale, logits, r_lo, r_hi,
                      c_lo, c_hi);
        softmax_inplace(logits);
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t n = 0;
        for (long r = r_lo; r <= r_hi; ++r) {
          for (long c = c_lo; c <= c_hi; ++c, ++n) {
            const double* v = &pr.v[(static_cast<std::size_t>(r) * cols + c) * vd];
            for (std::size_t d = 0; d < vd; ++d) acc[d] += logits[n] * v[d];
          }
        }
        for (std::size_t d = 0; d < vd; ++d) {
          out.values()[d * cells + row * cols + col] = acc[d];
        }
      }
    }
  });
  return out;
}

std::vector<double> attention_weights(const BevFeatureMap& source,
                                      const BevFeatureMap& cross,
                                      const AttentionParams& p,
                                      std::size_t row, std::size_t col) {
  check_inputs(source, cross, p);
  if (row >= source.dim(1) || col >= source.dim(2)) {
    throw std::out_of_range("attention_weights: query outside the map");
  }
  const Projected pr = project_all(source, cross, p);
  std::vector<double> logits;
  long r_lo, r_hi, c_lo, c_hi;
  window_logits(pr, p, source.dim(1), source.dim(2), row, col, logit_scale(p),
                logits, r_lo, r_hi, c_lo, c_hi);
  softmax_inplace(logits);
  return logits;
}

BevFeatureMap gated_fuse(const BevFeatureMap& neighbor, const GateParams& g) {
  const std::size_t channels = neighbor.dim(0);
  g.validate(channels);
  const std::size_t cells = neighbor.dim(1) * neighbor.dim(2);

  std::vector<double> pooled(channels, 0.0);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    pooled[ch] = cells == 0 ? 0.0
                            : pairwise_sum(neighbor.values().subspan(ch * cells, cells)) /
                                  static_cast<double>(cells);
  }
  std::vector<double> gate(channels);
  for (std::size_t o = 0; o < channels; ++o) {
    double z = g.bias[o];
    for (std::size_t i = 0; i < channels; ++i) z += g.weights(o, i) * pooled[i];
    gate[o] = sigmoid(z);
  }

  BevFeatureMap out(neighbor.shape(), 0.0);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t n = 0; n < cells; ++n) {
      out.values()[ch * cells + n] = gate[ch] * neighbor.values()[ch * cells + n];
    }
  }
  return out;
}

BevFeatureMap fuse_bev(const BevFeatureMap& camera, const BevFeatureMap& lidar,
                       const AttentionParams& p, const GateParams& g,
                       FusionDirection direction) {
  const bool camera_src = direction == FusionDirection::camera_source;
  const BevFeatureMap& source = camera_src ? camera : lidar;
  const BevFeatureMap& cross = camera_src ? lidar : camera;
  return gated_fuse(neighborhood_attention(source, cross, p), g);
}

AttentionParams identity_attention(std::size_t channels, int window,
                                   double query_gain) {
  AttentionParams p;
  p.window = window;
  p.query_proj = Grid2D<double>({channels, channels}, 0.0);
  p.key_proj = Grid2D<double>({channels, channels}, 0.0);
  p.value_proj = Grid2D<double>({channels, channels}, 0.0);
  for (std::size_t i = 0; i < channels; ++i) {
    p.query_proj(i, i) = query_gain;
    p.key_proj(i, i) = 1.0;
    p.value_proj(i, i) = 1.0;
  }
  const auto span = static_cast<std::size_t>(2 * std::max(window, 1) - 1);
  p.rel_bias = Grid2D<double>({span, span}, 0.0);
  return p;
}

GateParams constant_gate(std::size_t channels, double bias) {
  return {Grid2D<double>({channels, channels}, 0.0),
          std::vector<double>(channels, bias)};
}

}  // namespace occ
