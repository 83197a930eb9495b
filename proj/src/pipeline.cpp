#include "occ/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "occ/error.hpp"
#include "occ/io.hpp"
#include "occ/numeric.hpp"
#include "occ/parallel.hpp"
#include "occ/random.hpp"

namespace occ {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

template <typename T>
T get_key(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

const char* layers_name(LayersMeaning m) {
  return m == LayersMeaning::per_side ? "per-side" : "total";
}

const char* scale_name(AttentionScale s) {
  return s == AttentionScale::value_dim ? "value-dim" : "key-dim";
}

const char* mode_name(PerturbationMode m) {
  return m == PerturbationMode::per_frame ? "per-frame" : "per-sequence";
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}


}  // namespace

void PipelineConfig::validate() const {
  grid.validate();
  require(radius_px >= 0, "radius_px must be >= 0");
  require(std::isfinite(discretization.range_m) && discretization.range_m > 0.0,
          "range_m must be > 0");
  require(discretization.layers >= 1, "layers must be >= 1");
  require(discretization.meaning == LayersMeaning::per_side || discretization.layers % 2 == 0,
          "layers must be even when it counts hypotheses per pixel");
  require(window >= 1 && window % 2 == 1, "window must be a positive odd integer");
  require(std::isfinite(query_gain) && std::isfinite(center_bias) && std::isfinite(gate_bias),
          "fusion parameters must be finite");
  require(std::isfinite(depth_sigma) && depth_sigma > 0.0, "depth_sigma must be > 0");
  require(std::isfinite(empty_logit), "empty_logit must be finite");
  require(std::isfinite(alpha) && alpha >= 0.0, "alpha must be >= 0");
  require(std::isfinite(beta) && beta >= 0.0, "beta must be >= 0");
  require(std::isfinite(occupancy_eps) && occupancy_eps >= 0.0, "occupancy_eps must be >= 0");
  loss_weights.validate();
  for (std::size_t i = 0; i < distance_bins.size(); ++i) {
    require(std::isfinite(distance_bins[i]) && distance_bins[i] > 0.0,
            "distance bin edges must be > 0");
    require(i == 0 || distance_bins[i] > distance_bins[i - 1],
            "distance bin edges must be ascending");
  }
  require(std::isfinite(perturb_translation) && perturb_translation >= 0.0,
          "perturbation translation must be >= 0");
  require(std::isfinite(perturb_rotation_deg) && perturb_rotation_deg >= 0.0,
          "perturbation rotation must be >= 0");
  require(perturb_trials >= 1, "perturb_trials must be >= 1");
}

void apply_config_json(const nlohmann::json& j, PipelineConfig& cfg) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "grid") {
      try {
        cfg.grid = value.get<VoxelGridSpec>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: bad grid: ") + e.what());
      }
    } else if (key == "radius_px") {
      cfg.radius_px = get_key<int>(j, "radius_px");
    } else if (key == "range_m") {
      cfg.discretization.range_m = get_key<double>(j, "range_m");
    } else if (key == "layers") {
      cfg.discretization.layers = get_key<int>(j, "layers");
    } else if (key == "layers_meaning") {
      const auto s = get_key<std::string>(j, "layers_meaning");
      if (s == "per-side") cfg.discretization.meaning = LayersMeaning::per_side;
      else if (s == "total") cfg.discretization.meaning = LayersMeaning::total;
      else throw ConfigError("config: layers_meaning must be per-side or total");
    } else if (key == "window") {
      cfg.window = get_key<int>(j, "window");
    } else if (key == "attention_scale") {
      const auto s = get_key<std::string>(j, "attention_scale");
      if (s == "value-dim") cfg.attention_scale = AttentionScale::value_dim;
      else if (s == "key-dim") cfg.attention_scale = AttentionScale::key_dim;
      else throw ConfigError("config: attention_scale must be value-dim or key-dim");
    } else if (key == "query_gain") {
      cfg.query_gain = get_key<double>(j, "query_gain");
    } else if (key == "center_bias") {
      cfg.center_bias = get_key<double>(j, "center_bias");
    } else if (key == "gate_bias") {
      cfg.gate_bias = get_key<double>(j, "gate_bias");
    } else if (key == "depth_sigma") {
      cfg.depth_sigma = get_key<double>(j, "depth_sigma");
    } else if (key == "empty_logit") {
      cfg.empty_logit = get_key<double>(j, "empty_logit");
    } else if (key == "alpha") {
      cfg.alpha = get_key<double>(j, "alpha");
    } else if (key == "beta") {
      cfg.beta = get_key<double>(j, "beta");
    } else if (key == "occupancy_eps") {
      cfg.occupancy_eps = get_key<double>(j, "occupancy_eps");
    } else if (key == "normalize_distill") {
      cfg.normalize_distill = get_key<bool>(j, "normalize_distill");
    } else if (key == "loss_weights") {
      if (!value.is_object()) throw ConfigError("config: loss_weights must be an object");
      for (const auto& [k, v] : value.items()) {
        double* dst = nullptr;
        if (k == "depth") dst = &cfg.loss_weights.lambda_depth;
        else if (k == "seg") dst = &cfg.loss_weights.lambda_seg;
        else if (k == "pts") dst = &cfg.loss_weights.lambda_pts;
        else if (k == "mask_occ") dst = &cfg.loss_weights.lambda_mask_occ;
        else if (k == "kl") dst = &cfg.loss_weights.lambda_kl;
        else throw ConfigError("config: unknown loss weight '" + k + "'");
        *dst = get_key<double>(value, k.c_str());
      }
    } else if (key == "visible_mask") {
      cfg.visible_mask = get_key<bool>(j, "visible_mask");
    } else if (key == "distance_bins") {
      cfg.distance_bins = get_key<std::vector<double>>(j, "distance_bins");
    } else if (key == "undefined_iou") {
      const auto s = get_key<std::string>(j, "undefined_iou");
      if (s == "exclude") cfg.undefined_iou = UndefinedIou::exclude;
      else if (s == "zero") cfg.undefined_iou = UndefinedIou::as_zero;
      else throw ConfigError("config: undefined_iou must be exclude or zero");
    } else if (key == "perturb_translation") {
      cfg.perturb_translation = get_key<double>(j, "perturb_translation");
    } else if (key == "perturb_rotation_deg") {
      cfg.perturb_rotation_deg = get_key<double>(j, "perturb_rotation_deg");
    } else if (key == "perturb_mode") {
      const auto s = get_key<std::string>(j, "perturb_mode");
      if (s == "per-frame") cfg.perturb_mode = PerturbationMode::per_frame;
      else if (s == "per-sequence") cfg.perturb_mode = PerturbationMode::per_sequence;
      else throw ConfigError("config: perturb_mode must be per-frame or per-sequence");
    } else if (key == "perturb_trials") {
      cfg.perturb_trials = get_key<int>(j, "perturb_trials");
    } else if (key == "seed") {
      cfg.seed = get_key<std::uint64_t>(j, "seed");
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
}

nlohmann::json config_to_json(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["grid"] = cfg.grid;
  j["radius_px"] = cfg.radius_px;
  j["range_m"] = cfg.discretization.range_m;
  j["layers"] = cfg.discretization.layers;
  j["layers_meaning"] = layers_name(cfg.discretization.meaning);
  j["window"] = cfg.window;
  j["attention_scale"] = scale_name(cfg.attention_scale);
  j["query_gain"] = cfg.query_gain;
  j["center_bias"] = cfg.center_bias;
  j["gate_bias"] = cfg.gate_bias;
  j["depth_sigma"] = cfg.depth_sigma;
  j["empty_logit"] = cfg.empty_logit;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["occupancy_eps"] = cfg.occupancy_eps;
  j["normalize_distill"] = cfg.normalize_distill;
  j["loss_weights"] = {{"depth", cfg.loss_weights.lambda_depth},
                       {"seg", cfg.loss_weights.lambda_seg},
                       {"pts", cfg.loss_weights.lambda_pts},
                       {"mask_occ", cfg.loss_weights.lambda_mask_occ},
                       {"kl", cfg.loss_weights.lambda_kl}};
  j["visible_mask"] = cfg.visible_mask;
  j["distance_bins"] = cfg.distance_bins;
  j["undefined_iou"] = cfg.undefined_iou == UndefinedIou::exclude ? "exclude" : "zero";
  j["perturb_translation"] = cfg.perturb_translation;
  j["perturb_rotation_deg"] = cfg.perturb_rotation_deg;
  j["perturb_mode"] = mode_name(cfg.perturb_mode);
  j["perturb_trials"] = cfg.perturb_trials;
  j["seed"] = cfg.seed;
  return j;
}

SceneData prepare_scene(const SceneSpec& spec, const VoxelGridSpec& grid) {
  spec.validate();
  grid.validate();
  SceneData d;
  d.spec = spec;
  d.points = raycast_lidar(spec);
  d.views.reserve(spec.cameras.size());
  for (const auto& cam : spec.cameras) d.views.push_back(render_semantics_and_depth(spec, cam));
  d.truth = ground_truth_occupancy(spec, grid);
  d.visible = camera_visibility(spec, grid);
  return d;
}

std::size_t bev_channel(std::uint16_t class_id, std::size_t bin, std::size_t depth_bins) {
  return (static_cast<std::size_t>(class_id) - 1) * depth_bins + bin;
}

BevFeatureMap lidar_bev(std::span<const LabeledPoint> points, const VoxelGridSpec& grid,
                        std::size_t class_count) {
  const std::size_t depth = grid.depth_bins();
  BevFeatureMap bev({class_count * depth, grid.bev.rows(), grid.bev.cols()}, 0.0);
  for (const auto& p : points) {
    if (p.class_id == 0 || p.class_id >= class_count) continue;
    const auto cell = grid.bev.cell_of(p.position.x, p.position.y);
    const auto bin = grid.height_bin(p.position.z);
    if (!cell || !bin) continue;
    bev(bev_channel(p.class_id, *bin, depth), cell->row, cell->col) = 1.0;
  }
  return bev;
}

CameraStage run_camera_stage(const SceneData& scene, std::size_t camera,
                             const Extrinsics& assumed, const PipelineConfig& cfg) {
  const CameraIntrinsics& k = scene.spec.cameras.at(camera).intrinsics;
  const RenderedView& view = scene.views.at(camera);
  const std::size_t class_count = scene.spec.class_count();
  const std::size_t depth_bins = cfg.grid.depth_bins();

  CameraStage st;
  st.copoints = scatter_copoints(scene.points, assumed, k);
  st.extended = diffuse_depth(st.copoints.depth, view.labels, cfg.radius_px);
  st.hypotheses = discretize_depths(st.extended, cfg.discretization);

  const std::size_t rows = st.extended.dim(0);
  const std::size_t cols = st.extended.dim(1);
  const std::size_t nh = st.hypotheses.per_pixel();
  st.image.features = Tensor<double, 3>({class_count * depth_bins, rows, cols}, 0.0);
  st.image.depth_logits = Tensor<double, 3>({rows, cols, nh}, 0.0);
  const double inv = 1.0 / (2.0 * cfg.depth_sigma * cfg.depth_sigma);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!st.hypotheses.has(r, c)) continue;
      const std::uint16_t label = view.labels(r, c);
      const double d = st.extended(r, c);
      if (label > 0 && label < class_count) {
        const Point3 p = back_project({c + 0.5, r + 0.5, d}, assumed, k);
        if (const auto bin = cfg.grid.height_bin(p.z)) {
          st.image.features(bev_channel(label, *bin, depth_bins), r, c) = 1.0;
        }
      }
      const double oracle = view.depth(r, c);
      if (oracle <= 0.0) continue;
      const auto hs = st.hypotheses.at(r, c);
      for (std::size_t b = 0; b < nh; ++b) {
        const double e = hs[b] - oracle;
        st.image.depth_logits(r, c, b) = -e * e * inv;
      }
    }
  }
  return st;
}

CameraBranch run_camera_branch(const SceneData& scene, std::span<const Extrinsics> assumed,
                               const PipelineConfig& cfg) {
  if (assumed.size() != scene.spec.cameras.size()) {
    throw std::invalid_argument("camera branch: one extrinsics per camera required");
  }
  const std::size_t class_count = scene.spec.class_count();
  const std::size_t channels = class_count * cfg.grid.depth_bins();
  CameraBranch out;
  out.bev = BevFeatureMap({channels, cfg.grid.bev.rows(), cfg.grid.bev.cols()}, 0.0);

  std::vector<double> depth_logits;
  std::vector<std::size_t> depth_targets;
  std::vector<double> seg_logits;
  std::vector<std::size_t> seg_targets;
  std::size_t nh = 0;
  constexpr double seg_margin = 4.0;

  for (std::size_t i = 0; i < assumed.size(); ++i) {
    CameraStage st = run_camera_stage(scene, i, assumed[i], cfg);
    const auto& k = scene.spec.cameras[i].intrinsics;
    const BevFeatureMap bev =
        lift_to_bev(st.image, st.hypotheses, assumed[i], k, cfg.grid.bev);
    auto acc = out.bev.values();
    const auto add = bev.values();
    for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += add[n];

    const RenderedView& view = scene.views[i];
    nh = st.hypotheses.per_pixel();
    for (std::size_t r = 0; r < view.labels.dim(0); ++r) {
      for (std::size_t c = 0; c < view.labels.dim(1); ++c) {
        const std::uint16_t label = view.labels(r, c);
        for (std::size_t q = 0; q < class_count; ++q) {
          seg_logits.push_back(q == label ? seg_margin : 0.0);
        }
        seg_targets.push_back(std::min<std::size_t>(label, class_count - 1));
        const double oracle = view.depth(r, c);
        if (!st.hypotheses.has(r, c) || oracle <= 0.0) continue;
        const auto hs = st.hypotheses.at(r, c);
        std::size_t best = 0;
        for (std::size_t b = 0; b < hs.size(); ++b) {
          depth_logits.push_back(st.image.depth_logits(r, c, b));
          if (std::abs(hs[b] - oracle) < std::abs(hs[best] - oracle)) best = b;
        }
        depth_targets.push_back(best);
      }
    }
    out.stages.push_back(std::move(st));
  }

  if (!depth_targets.empty()) {
    const Grid2D<double> logits({depth_targets.size(), nh}, std::move(depth_logits));
    out.depth_loss = cross_entropy(logits, depth_targets).value;
  }
  if (!seg_targets.empty()) {
    const Grid2D<double> logits({seg_targets.size(), class_count}, std::move(seg_logits));
    out.seg_loss = cross_entropy(logits, seg_targets).value;
  }
  return out;
}

AttentionParams stand_in_attention(std::size_t channels, const PipelineConfig& cfg) {
  AttentionParams p = identity_attention(channels, cfg.window, cfg.query_gain);
  p.scale = cfg.attention_scale;
  // identity projections, so key and value dims both equal the channel count
  const double denom = std::sqrt(static_cast<double>(channels));
  p.rel_bias(cfg.window - 1, cfg.window - 1) = cfg.center_bias * denom;
  return p;
}

GateParams stand_in_gate(std::size_t channels, const PipelineConfig& cfg) {
  return constant_gate(channels, cfg.gate_bias);
}

OccupancyLogits occupancy_logits(const BevFeatureMap& fused, std::size_t class_count,
                                 const PipelineConfig& cfg) {
  OccupancyLogits logits = channel_to_height(fused, class_count, cfg.grid.depth_bins());
  const std::size_t e = class_count - 1;
  for (std::size_t z = 0; z < logits.dim(1); ++z)
    for (std::size_t r = 0; r < logits.dim(2); ++r)
      for (std::size_t c = 0; c < logits.dim(3); ++c) logits(e, z, r, c) = cfg.empty_logit;
  return logits;
}

EvalSummary evaluate(const OccupancyGrid& pred, const OccupancyGrid& truth,
                     const VoxelMask* visible, const PipelineConfig& cfg,
                     const Point3& ego) {
  EvalSummary e;
  const ConfusionMatrix cm = accumulate(pred, truth, visible);
  e.voxels = cm.total();
  e.binary_iou = binary_iou(cm);
  const auto classes = semantic_classes(truth.class_count);
  e.semantic = miou(cm, classes, cfg.undefined_iou);
  e.bins = distance_binned_eval(pred, truth, cfg.grid, ego, cfg.distance_bins, visible,
                                cfg.undefined_iou);
  return e;
}

nlohmann::json eval_json(const EvalSummary& e) {
  nlohmann::json j;
  j["voxels"] = e.voxels;
  j["iou"] = optional_json(e.binary_iou);
  j["miou"] = optional_json(e.semantic.mean);
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < e.semantic.classes.size(); ++i) {
    per.push_back({{"class", e.semantic.classes[i]},
                   {"iou", optional_json(e.semantic.per_class[i])}});
  }
  j["per_class"] = per;
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : e.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", std::isfinite(b.upper) ? nlohmann::json(b.upper)
                                                     : nlohmann::json("inf")},
                    {"voxels", b.voxels},
                    {"iou", optional_json(b.iou)},
                    {"miou", optional_json(b.semantic.mean)}});
  }
  j["distance_bins"] = bins;
  return j;
}

std::string eval_csv(const EvalSummary& e) {
  std::ostringstream os;
  os.precision(17);
  auto put = [&](const std::optional<double>& v) {
    if (v) os << *v;
    else os << "nan";
  };
  os << "scope,lower,upper,voxels,iou,miou\n";
  os << "all,0,inf," << e.voxels << ',';
  put(e.binary_iou);
  os << ',';
  put(e.semantic.mean);
  os << '\n';
  for (const auto& b : e.bins) {
    os << "bin," << b.lower << ',';
    if (std::isfinite(b.upper)) os << b.upper;
    else os << "inf";
    os << ',' << b.voxels << ',';
    put(b.iou);
    os << ',';
    put(b.semantic.mean);
    os << '\n';
  }
  for (std::size_t i = 0; i < e.semantic.classes.size(); ++i) {
    os << "class_" << e.semantic.classes[i] << ",0,inf,,";
    put(e.semantic.per_class[i]);
    os << ",\n";
  }
  return os.str();
}

namespace {

// Lovasz + CE over voxels holding LiDAR returns, labelled with the most
// frequent point class (ties to the smaller class).
std::pair<double, double> points_supervision(const OccupancyLogits& logits, std::span<const LabeledPoint> points,
                          const VoxelGridSpec& grid, std::size_t class_count) {
  std::map<std::size_t, std::vector<std::size_t>> votes;
  const std::size_t depth = grid.depth_bins();
  const std::size_t cols = grid.bev.cols();
  for (const auto& p : points) {
    if (p.class_id == 0 || p.class_id >= class_count) continue;
    const auto cell = grid.bev.cell_of(p.position.x, p.position.y);
    const auto bin = grid.height_bin(p.position.z);
    if (!cell || !bin) continue;
    const std::size_t key = (cell->row * cols + cell->col) * depth + *bin;
    auto& v = votes[key];
    if (v.empty()) v.assign(class_count, 0);
    ++v[p.class_id - 1];
  }
  if (votes.empty()) return {0.0, 0.0};
  const std::size_t n = votes.size();
  Grid2D<double> rows_logits({n, class_count}, 0.0);
  Grid2D<double> probs({class_count, n}, 0.0);
  std::vector<std::size_t> targets;
  targets.reserve(n);
  std::size_t i = 0;
  std::vector<double> buf(class_count);
  for (const auto& [key, v] : votes) {
    const std::size_t z = key % depth;
    const std::size_t rc = key / depth;
    const std::size_t r = rc / cols;
    const std::size_t c = rc % cols;
    for (std::size_t q = 0; q < class_count; ++q) {
      buf[q] = logits(q, z, r, c);
      rows_logits(i, q) = buf[q];
    }
    softmax_inplace(buf);
    for (std::size_t q = 0; q < class_count; ++q) probs(q, i) = buf[q];
    targets.push_back(static_cast<std::size_t>(
        std::max_element(v.begin(), v.end()) - v.begin()));
    ++i;
  }
  return {lovasz_softmax(probs, targets).value, cross_entropy(rows_logits, targets).value};
}

double mask_occupancy_loss(const OccupancyLogits& logits, const OccupancyGrid& truth,
                           const VoxelMask* visible) {
  const std::size_t k = logits.dim(0);
  const std::size_t depth = logits.dim(1);
  const std::size_t rows = logits.dim(2);
  const std::size_t cols = logits.dim(3);
  const std::size_t n = rows * cols * depth;
  Grid2D<double> l({n, k}, 0.0);
  std::vector<std::size_t> targets(n);
  std::vector<std::uint8_t> mask(n, 1);
  std::size_t i = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t z = 0; z < depth; ++z, ++i) {
        for (std::size_t q = 0; q < k; ++q) l(i, q) = logits(q, z, r, c);
        targets[i] = truth.labels(r, c, z);
        if (visible) mask[i] = (*visible)(r, c, z) != 0 ? 1 : 0;
      }
  return masked_cross_entropy(l, targets, mask).value;
}

}  // namespace

FusionRun run_fusion_pipeline(const PipelineConfig& cfg, const SceneSpec& scene) {
  cfg.validate();
  const SceneData data = prepare_scene(scene, cfg.grid);
  std::vector<Extrinsics> ex;
  for (const auto& cam : scene.cameras) ex.push_back(cam.extrinsics);
  return run_fusion_pipeline(cfg, data, ex);
}

FusionRun run_fusion_pipeline(const PipelineConfig& cfg, const SceneData& scene,
                              std::span<const Extrinsics> assumed) {
  cfg.validate();
  const std::size_t class_count = scene.spec.class_count();
  FusionRun run;
  CameraBranch cam = run_camera_branch(scene, assumed, cfg);
  run.camera_bev = std::move(cam.bev);
  run.lidar_bev = lidar_bev(scene.points, cfg.grid, class_count);
  const std::size_t channels = run.camera_bev.dim(0);
  run.fused = fuse_bev(run.camera_bev, run.lidar_bev, stand_in_attention(channels, cfg),
                       stand_in_gate(channels, cfg), FusionDirection::camera_source);
  const OccupancyLogits logits = occupancy_logits(run.fused, class_count, cfg);
  run.prediction = decode_labels(logits);

  const VoxelMask* visible = cfg.visible_mask ? &scene.visible : nullptr;
  run.eval = evaluate(run.prediction, scene.truth, visible, cfg, scene.spec.lidar.origin);

  const KlRun kl = run_kl_from_maps(cfg, run.camera_bev, run.lidar_bev);
  run.losses.depth = cam.depth_loss;
  run.losses.seg = cam.seg_loss;
  const auto [lovasz, pts_ce] = points_supervision(logits, scene.points, cfg.grid, class_count);
  run.losses.pts = points_loss(lovasz, pts_ce);
  run.losses.mask_occ = mask_occupancy_loss(logits, scene.truth, visible);
  run.losses.distill = cfg.normalize_distill ? kl.normalized_loss : kl.loss.loss;
  run.total_loss = total_loss(run.losses, cfg.loss_weights);

  nlohmann::json r;
  r["eval"] = eval_json(run.eval);
  r["losses"] = {{"depth", run.losses.depth},
                 {"seg", run.losses.seg},
                 {"pts", run.losses.pts},
                 {"pts_lovasz", lovasz},
                 {"pts_ce", pts_ce},
                 {"mask_occ", run.losses.mask_occ},
                 {"distill", run.losses.distill},
                 {"total", run.total_loss}};
  r["bev"] = {{"camera_occupied_cells", occupied_cells(run.camera_bev)},
              {"lidar_occupied_cells", occupied_cells(run.lidar_bev)},
              {"fused_occupied_cells", occupied_cells(run.fused)}};
  r["lidar_points"] = scene.points.size();
  r["visible_mask"] = cfg.visible_mask;
  run.report = std::move(r);
  return run;
}

KlRun distill_from_maps(const PipelineConfig& cfg, const BevFeatureMap& fused,
                        const BevFeatureMap& camera) {
  KlRun kl;
  const OccupancyMask2D mf = occupancy_mask(fused, cfg.occupancy_eps);
  const OccupancyMask2D mi = occupancy_mask(camera, cfg.occupancy_eps);
  kl.regions = region_split(mf, mi);
  kl.weights = distill_weights(kl.regions.active, kl.regions.inactive, cfg.alpha, cfg.beta);
  kl.loss = distill_loss(fused, camera, kl.weights);
  const double wsum = kl.weights.total();
  kl.normalized_loss = wsum > 0.0 ? kl.loss.loss / wsum : 0.0;

  nlohmann::json r;
  r["n_active"] = kl.weights.n_active;
  r["n_inactive"] = kl.weights.n_inactive;
  r["rho"] = kl.weights.rho;
  r["alpha"] = kl.weights.alpha;
  r["beta"] = kl.weights.beta;
  r["weight_sum"] = wsum;
  r["loss"] = kl.loss.loss;
  r["normalized_loss"] = kl.normalized_loss;
  r["fused_occupied_cells"] = occupied_cells(fused);
  r["camera_occupied_cells"] = occupied_cells(camera);
  kl.report = std::move(r);
  return kl;
}

KlRun run_kl_from_maps(const PipelineConfig& cfg, const BevFeatureMap& camera,
                       const BevFeatureMap& lidar) {
  const std::size_t channels = camera.dim(0);
  BevFeatureMap fused = fuse_bev(camera, lidar, stand_in_attention(channels, cfg),
                                 stand_in_gate(channels, cfg), FusionDirection::lidar_source);
  KlRun kl = distill_from_maps(cfg, fused, camera);
  kl.camera_bev = camera;
  kl.lidar_bev = lidar;
  kl.fused = std::move(fused);
  return kl;
}

KlRun run_kl_path(const PipelineConfig& cfg, const SceneSpec& scene) {
  cfg.validate();
  const SceneData data = prepare_scene(scene, cfg.grid);
  std::vector<Extrinsics> ex;
  for (const auto& cam : scene.cameras) ex.push_back(cam.extrinsics);
  const CameraBranch cam = run_camera_branch(data, ex, cfg);
  return run_kl_from_maps(cfg, cam.bev, lidar_bev(data.points, cfg.grid, scene.class_count()));
}

double mean_copoint_displacement(std::span<const LabeledPoint> points,
                                 const CameraIntrinsics& k, const Extrinsics& nominal,
                                 const Extrinsics& perturbed) {
  std::vector<double> d;
  for (const auto& p : points) {
    const auto a = project(p.position, nominal, k);
    const auto b = project(p.position, perturbed, k);
    if (!a || !b) continue;
    d.push_back(std::hypot(a->u - b->u, a->v - b->v));
  }
  if (d.empty()) return 0.0;
  return pairwise_sum(d) / static_cast<double>(d.size());
}

PerturbationReport run_perturbation_sweep(const PipelineConfig& cfg, const SceneSpec& scene,
                                          std::span<const Magnitude> magnitudes) {
  cfg.validate();
  for (const auto& m : magnitudes) {
    if (!(std::isfinite(m.translation) && m.translation >= 0.0 &&
          std::isfinite(m.rotation_deg) && m.rotation_deg >= 0.0)) {
      throw ConfigError("perturb: magnitudes must be finite and >= 0");
    }
  }
  const auto trials = static_cast<std::size_t>(cfg.perturb_trials);

  struct Frame {
    SceneData data;
    std::vector<Extrinsics> nominal;
    EvalSummary base;
  };
  std::vector<Frame> frames;
  frames.reserve(trials);
  for (std::size_t f = 0; f < trials; ++f) {
    const SceneSpec spec =
        f == 0 ? scene : jitter_boxes(scene, mix_seed(cfg.seed, f), cfg.grid.bev.cell);
    Frame fr{prepare_scene(spec, cfg.grid), {}, {}};
    for (const auto& cam : spec.cameras) fr.nominal.push_back(cam.extrinsics);
    fr.base = run_fusion_pipeline(cfg, fr.data, fr.nominal).eval;
    frames.push_back(std::move(fr));
  }

  PerturbationReport out;
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& m : magnitudes) {
    MagnitudeReport mr;
    mr.magnitude = m;
    for (std::size_t f = 0; f < trials; ++f) {
      const Frame& fr = frames[f];
      const std::uint64_t frame_seed =
          mix_seed(cfg.seed, cfg.perturb_mode == PerturbationMode::per_frame ? f : 0);
      std::vector<Extrinsics> pert;
      std::vector<double> disp;
      for (std::size_t c = 0; c < fr.nominal.size(); ++c) {
        pert.push_back(perturb_extrinsics(fr.nominal[c], m.translation, m.rotation_deg,
                                          mix_seed(frame_seed, c)));
        disp.push_back(mean_copoint_displacement(
            fr.data.points, fr.data.spec.cameras[c].intrinsics, fr.nominal[c], pert.back()));
      }
      const EvalSummary e = run_fusion_pipeline(cfg, fr.data, pert).eval;
      TrialResult t;
      t.frame = f;
      t.delta_iou = e.binary_iou.value_or(0.0) - fr.base.binary_iou.value_or(0.0);
      t.delta_miou = e.semantic.mean.value_or(0.0) - fr.base.semantic.mean.value_or(0.0);
      t.mean_displacement_px = disp.empty() ? 0.0 : pairwise_sum(disp) / disp.size();
      mr.trials.push_back(t);
    }
    std::vector<double> di, dm, dd;
    for (const auto& t : mr.trials) {
      di.push_back(t.delta_iou);
      dm.push_back(t.delta_miou);
      dd.push_back(t.mean_displacement_px);
    }
    const double n = static_cast<double>(mr.trials.size());
    mr.mean_delta_iou = pairwise_sum(di) / n;
    mr.mean_delta_miou = pairwise_sum(dm) / n;
    mr.mean_displacement_px = pairwise_sum(dd) / n;
    mr.worst_delta_iou = *std::min_element(di.begin(), di.end());
    mr.worst_delta_miou = *std::min_element(dm.begin(), dm.end());

    nlohmann::json jt = nlohmann::json::array();
    for (const auto& t : mr.trials) {
      jt.push_back({{"frame", t.frame},
                    {"delta_iou", t.delta_iou},
                    {"delta_miou", t.delta_miou},
                    {"mean_displacement_px", t.mean_displacement_px}});
    }
    jm.push_back({{"translation_m", m.translation},
                  {"rotation_deg", m.rotation_deg},
                  {"mean_delta_iou", mr.mean_delta_iou},
                  {"mean_delta_miou", mr.mean_delta_miou},
                  {"worst_delta_iou", mr.worst_delta_iou},
                  {"worst_delta_miou", mr.worst_delta_miou},
                  {"mean_displacement_px", mr.mean_displacement_px},
                  {"trials", jt}});
    out.magnitudes.push_back(std::move(mr));
  }
  nlohmann::json base = nlohmann::json::array();
  for (std::size_t f = 0; f < frames.size(); ++f) {
    base.push_back({{"frame", f},
                    {"iou", optional_json(frames[f].base.binary_iou)},
                    {"miou", optional_json(frames[f].base.semantic.mean)}});
  }
  out.report = {{"mode", mode_name(cfg.perturb_mode)},
                {"seed", cfg.seed},
                {"baseline", base},
                {"magnitudes", jm}};
  return out;
}

}  // namespace occ
