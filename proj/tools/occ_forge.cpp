#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "occ/distillation.hpp"
#include "occ/error.hpp"
#include "occ/fusion.hpp"
#include "occ/io.hpp"
#include "occ/metrics.hpp"
#include "occ/parallel.hpp"
#include "occ/pipeline.hpp"
#include "occ/synthetic_scene.hpp"
#include "occ/view_transform.hpp"

namespace fs = std::filesystem;
using namespace occ;

namespace {

struct Options {
  PipelineConfig cfg;
  std::string config_path;
  int threads = 0;
  std::string grid = "toy";
  std::string layers_meaning = "per-side";
  std::string scale = "value-dim";
  std::string undefined = "exclude";
  std::string mode = "per-frame";
  std::string dtype = "f32";
  std::string scene = "toy";
  std::string out;
};

SceneSpec load_scene(const std::string& arg) {
  if (arg == "toy") return toy_scene();
  const json j = read_json(arg);
  SceneSpec s;
  try {
    s = j.get<SceneSpec>();
  } catch (const json::exception& e) {
    throw DataError(arg + ": " + e.what());
  }
  s.validate();
  return s;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
}

// Resolves string-valued flags into the config, then applies the config file,
// whose keys take precedence over flags.
void finalize(Options& o) {
  if (o.grid == "toy") o.cfg.grid = VoxelGridSpec::toy();
  else if (o.grid == "occ3d") o.cfg.grid = VoxelGridSpec::occ3d();
  else {
    try {
      o.cfg.grid = read_json(o.grid).get<VoxelGridSpec>();
    } catch (const json::exception& e) {
      throw ConfigError(o.grid + ": " + e.what());
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  o.cfg.discretization.meaning =
      o.layers_meaning == "total" ? LayersMeaning::total : LayersMeaning::per_side;
  o.cfg.attention_scale =
      o.scale == "key-dim" ? AttentionScale::key_dim : AttentionScale::value_dim;
  o.cfg.undefined_iou = o.undefined == "zero" ? UndefinedIou::as_zero : UndefinedIou::exclude;
  o.cfg.perturb_mode =
      o.mode == "per-sequence" ? PerturbationMode::per_sequence : PerturbationMode::per_frame;
  if (!o.config_path.empty()) {
    json j;
    try {
      j = read_json(o.config_path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    apply_config_json(j, o.cfg);
  }
  o.cfg.validate();
  if (o.threads > 0) set_thread_count(static_cast<std::size_t>(o.threads));
}

Dtype real_dtype(const Options& o) {
  const Dtype d = parse_dtype(o.dtype);
  if (d != Dtype::f32 && d != Dtype::f64) throw ConfigError("--dtype must be f32 or f64");
  return d;
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

void add_discretization(CLI::App* c, Options& o) {
  c->add_option("--radius", o.cfg.radius_px, "Diffusion radius in pixels")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--range-m", o.cfg.discretization.range_m, "Discretization range (m)")
      ->check(CLI::PositiveNumber);
  c->add_option("--layers", o.cfg.discretization.layers, "Discretization layers")
      ->check(CLI::PositiveNumber);
  c->add_option("--layers-meaning", o.layers_meaning, "per-side or total")
      ->check(CLI::IsMember({"per-side", "total"}));
  c->add_option("--depth-sigma", o.cfg.depth_sigma, "Stand-in depth head width (m)");
}

void add_fusion(CLI::App* c, Options& o) {
  c->add_option("--k", o.cfg.window, "Attention window size (odd)");
  c->add_option("--attention-scale", o.scale, "value-dim or key-dim")
      ->check(CLI::IsMember({"value-dim", "key-dim"}));
  c->add_option("--query-gain", o.cfg.query_gain);
  c->add_option("--center-bias", o.cfg.center_bias);
  c->add_option("--gate-bias", o.cfg.gate_bias);
}

void add_eval(CLI::App* c, Options& o) {
  c->add_flag("--visible-mask,!--no-visible-mask", o.cfg.visible_mask,
              "Restrict scoring to camera-visible voxels");
  c->add_option("--bins", o.cfg.distance_bins, "Distance bin edges (m)")->delimiter(',');
  c->add_option("--undefined-iou", o.undefined, "exclude or zero")
      ->check(CLI::IsMember({"exclude", "zero"}));
  c->add_option("--empty-logit", o.cfg.empty_logit);
}

void add_distill(CLI::App* c, Options& o) {
  c->add_option("--alpha", o.cfg.alpha);
  c->add_option("--beta", o.cfg.beta);
  c->add_option("--eps", o.cfg.occupancy_eps, "Occupancy threshold on the L1 norm");
  c->add_flag("--normalize", o.cfg.normalize_distill, "Divide the loss by sum(W)");
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--grid", o.grid, "toy, occ3d, or a grid JSON file");
  c->add_option("--seed", o.cfg.seed);
  c->add_option("--dtype", o.dtype, "Real-valued output dtype (f32 or f64)")
      ->check(CLI::IsMember({"f32", "f64"}));
}

int cmd_generate(Options& o) {
  finalize(o);
  const SceneSpec spec = load_scene(o.scene);
  const SceneData d = prepare_scene(spec, o.cfg.grid);
  ensure_dir(o.out);
  const Dtype dt = real_dtype(o);
  write_json(join(o.out, "scene.json"), json(spec));
  write_json(join(o.out, "grid.json"), json(o.cfg.grid));
  write_point_cloud(join(o.out, "points.bin"), d.points);
  for (std::size_t i = 0; i < spec.cameras.size(); ++i) {
    const std::string p = "cam" + std::to_string(i);
    write_json(join(o.out, p + ".json"), json(spec.cameras[i]));
    write_tensor(join(o.out, p + "_semantic.raw"), d.views[i].labels, Dtype::u16);
    write_tensor(join(o.out, p + "_depth.raw"), d.views[i].depth, dt);
  }
  write_occupancy(join(o.out, "truth.occ"), d.truth);
  write_tensor(join(o.out, "visible.raw"), d.visible, Dtype::u8);
  print({{"points", d.points.size()}, {"cameras", spec.cameras.size()}, {"out", o.out}});
  return 0;
}

int cmd_project(Options& o, const std::string& points_path, const std::string& camera_path) {
  finalize(o);
  const auto points = load_point_cloud(points_path);
  CameraModel cam;
  try {
    cam = read_json(camera_path).get<CameraModel>();
  } catch (const json::exception& e) {
    throw DataError(camera_path + ": " + e.what());
  }
  cam.intrinsics.validate();
  cam.extrinsics.validate();
  const CoPointMaps m = scatter_copoints(points, cam.extrinsics, cam.intrinsics);
  write_tensor(o.out + "_depth.raw", m.depth, real_dtype(o));
  write_tensor(o.out + "_labels.raw", m.labels, Dtype::u16);
  std::size_t n = 0;
  for (double v : m.depth.values()) n += v > 0.0;
  print({{"copoints", n}});
  return 0;
}

int cmd_diffuse(Options& o, const std::string& depth_path, const std::string& mask_path) {
  finalize(o);
  const auto depth = read_tensor<double, 2>(depth_path);
  const auto mask = read_tensor<std::uint16_t, 2>(mask_path);
  if (depth.shape() != mask.shape()) throw DataError("diffuse: depth and mask shapes differ");
  const DepthMap out = diffuse_depth(depth, mask, o.cfg.radius_px);
  write_tensor(o.out, out, real_dtype(o));
  std::size_t n = 0;
  for (double v : out.values()) n += v > 0.0;
  print({{"extended_pixels", n}});
  return 0;
}

int cmd_lift(Options& o) {
  finalize(o);
  const SceneSpec spec = load_scene(o.scene);
  const SceneData d = prepare_scene(spec, o.cfg.grid);
  std::vector<Extrinsics> ex;
  for (const auto& c : spec.cameras) ex.push_back(c.extrinsics);
  const CameraBranch cam = run_camera_branch(d, ex, o.cfg);
  const BevFeatureMap lidar = lidar_bev(d.points, o.cfg.grid, spec.class_count());
  ensure_dir(o.out);
  const Dtype dt = real_dtype(o);
  const json meta = {{"class_count", spec.class_count()}, {"depth_bins", o.cfg.grid.depth_bins()}};
  write_tensor(join(o.out, "camera_bev.raw"), cam.bev, dt, meta);
  write_tensor(join(o.out, "lidar_bev.raw"), lidar, dt, meta);
  print({{"camera_occupied_cells", occupied_cells(cam.bev)},
         {"lidar_occupied_cells", occupied_cells(lidar)},
         {"depth_loss", cam.depth_loss}});
  return 0;
}

int cmd_fuse(Options& o, const std::string& camera_path, const std::string& lidar_path,
             const std::string& direction, const std::string& params_dir,
             const std::string& dump_params) {
  finalize(o);
  json meta;
  const auto camera = read_tensor<double, 3>(camera_path, &meta);
  const auto lidar = read_tensor<double, 3>(lidar_path);
  const std::size_t channels = camera.dim(0);
  AttentionParams p = stand_in_attention(channels, o.cfg);
  GateParams g = stand_in_gate(channels, o.cfg);
  if (!params_dir.empty()) {
    p.query_proj = read_tensor<double, 2>(join(params_dir, "query_proj.raw"));
    p.key_proj = read_tensor<double, 2>(join(params_dir, "key_proj.raw"));
    p.value_proj = read_tensor<double, 2>(join(params_dir, "value_proj.raw"));
    p.rel_bias = read_tensor<double, 2>(join(params_dir, "rel_bias.raw"));
    p.window = static_cast<int>((p.rel_bias.dim(0) + 1) / 2);
    g.weights = read_tensor<double, 2>(join(params_dir, "gate_weights.raw"));
    g.bias = read_tensor<double, 1>(join(params_dir, "gate_bias.raw")).storage();
  }
  try {
    p.validate();
    g.validate(p.value_dim());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  if (!dump_params.empty()) {
    ensure_dir(dump_params);
    write_tensor(join(dump_params, "query_proj.raw"), p.query_proj, Dtype::f64);
    write_tensor(join(dump_params, "key_proj.raw"), p.key_proj, Dtype::f64);
    write_tensor(join(dump_params, "value_proj.raw"), p.value_proj, Dtype::f64);
    write_tensor(join(dump_params, "rel_bias.raw"), p.rel_bias, Dtype::f64);
    write_tensor(join(dump_params, "gate_weights.raw"), g.weights, Dtype::f64);
    write_tensor(join(dump_params, "gate_bias.raw"),
                 Tensor<double, 1>({g.bias.size()}, g.bias), Dtype::f64);
  }
  const auto dir = direction == "lidar_source" ? FusionDirection::lidar_source
                                               : FusionDirection::camera_source;
  const BevFeatureMap fused = fuse_bev(camera, lidar, p, g, dir);
  write_tensor(o.out, fused, real_dtype(o), meta);
  print({{"fused_occupied_cells", occupied_cells(fused)}, {"direction", direction}});
  return 0;
}

int cmd_distill(Options& o, const std::string& fused_path, const std::string& camera_path) {
  finalize(o);
  KlRun kl;
  if (!fused_path.empty() || !camera_path.empty()) {
    if (fused_path.empty() || camera_path.empty()) {
      throw ConfigError("distill-weights: --fused and --camera go together");
    }
    const auto fused = read_tensor<double, 3>(fused_path);
    const auto camera = read_tensor<double, 3>(camera_path);
    if (fused.shape() != camera.shape()) throw DataError("distill-weights: shape mismatch");
    kl = distill_from_maps(o.cfg, fused, camera);
  } else {
    kl = run_kl_path(o.cfg, load_scene(o.scene));
  }
  if (!o.out.empty()) {
    ensure_dir(o.out);
    write_tensor(join(o.out, "weights.raw"), kl.weights.weights, real_dtype(o));
    write_tensor(join(o.out, "active.raw"), kl.regions.active, Dtype::u8);
    write_tensor(join(o.out, "inactive.raw"), kl.regions.inactive, Dtype::u8);
    write_pgm(join(o.out, "weights.pgm"), kl.weights.weights);
    write_json(join(o.out, "report.json"), kl.report);
  }
  print(kl.report);
  return 0;
}

int cmd_predict(Options& o, bool slices) {
  finalize(o);
  const FusionRun run = run_fusion_pipeline(o.cfg, load_scene(o.scene));
  ensure_dir(o.out);
  write_occupancy(join(o.out, "prediction.occ"), run.prediction);
  write_json(join(o.out, "report.json"), run.report);
  write_text(join(o.out, "report.csv"), eval_csv(run.eval));
  if (slices) {
    const auto& l = run.prediction.labels;
    const double scale = 255.0 / static_cast<double>(run.prediction.class_count - 1);
    for (std::size_t z = 0; z < l.dim(2); ++z) {
      Grid2D<std::uint8_t> img({l.dim(0), l.dim(1)}, 0);
      for (std::size_t r = 0; r < l.dim(0); ++r)
        for (std::size_t c = 0; c < l.dim(1); ++c)
          img(l.dim(0) - 1 - r, c) = static_cast<std::uint8_t>(l(r, c, z) * scale);
      write_pgm(join(o.out, "slice_" + std::to_string(z) + ".pgm"), img);
    }
  }
  print(run.report["eval"]);
  return 0;
}

int cmd_eval(Options& o, const std::string& pred_path, const std::string& truth_path,
             const std::string& mask_path, const std::string& report, const std::string& csv) {
  finalize(o);
  json out;
  EvalSummary e;
  if (!pred_path.empty() || !truth_path.empty()) {
    if (pred_path.empty() || truth_path.empty()) {
      throw ConfigError("eval: --pred and --truth go together");
    }
    const OccupancyGrid pred = read_occupancy(pred_path);
    const OccupancyGrid truth = read_occupancy(truth_path);
    if (pred.labels.shape() != truth.labels.shape() || pred.class_count != truth.class_count) {
      throw DataError("eval: prediction and truth grids differ in shape or classes");
    }
    std::optional<VoxelMask> mask;
    if (o.cfg.visible_mask && !mask_path.empty()) {
      mask = read_tensor<std::uint8_t, 3>(mask_path);
      if (mask->shape() != truth.labels.shape()) throw DataError("eval: mask shape mismatch");
    }
    e = evaluate(pred, truth, mask ? &*mask : nullptr, o.cfg, Point3{});
    out = eval_json(e);
  } else {
    const FusionRun run = run_fusion_pipeline(o.cfg, load_scene(o.scene));
    e = run.eval;
    out = run.report;
  }
  if (!report.empty()) write_json(report, out);
  if (!csv.empty()) write_text(csv, eval_csv(e));
  print(out);
  return 0;
}

int cmd_perturb(Options& o, bool sweep, bool include_zero) {
  finalize(o);
  std::vector<Magnitude> mags;
  if (include_zero) mags.push_back({0.0, 0.0});
  if (sweep) {
    mags.push_back({0.05, 0.5});
    mags.push_back({0.1, 1.0});
    mags.push_back({0.2, 2.0});
  } else {
    mags.push_back({o.cfg.perturb_translation, o.cfg.perturb_rotation_deg});
  }
  const PerturbationReport rep = run_perturbation_sweep(o.cfg, load_scene(o.scene), mags);
  if (!o.out.empty()) write_json(o.out, rep.report);
  print(rep.report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occ-forge: multimodal semantic occupancy pipeline"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "JSON config; its keys override flags");
  app.add_option("--threads", o.threads, "Worker threads (default: OCC_FORGE_THREADS or all)")
      ->check(CLI::NonNegativeNumber);

  auto* gen = app.add_subcommand("generate", "Render a scene: LiDAR, cameras, ground truth");
  gen->add_option("--spec", o.scene, "Scene JSON, or 'toy'");
  gen->add_option("--out", o.out, "Output directory")->required();
  add_common(gen, o);

  std::string points_path, camera_path;
  auto* proj = app.add_subcommand("project", "Scatter LiDAR co-points into one camera");
  proj->add_option("--points", points_path, "Point cloud (.bin or .csv)")->required();
  proj->add_option("--camera", camera_path, "Camera model JSON")->required();
  proj->add_option("--out", o.out, "Output prefix")->required();
  add_common(proj, o);

  std::string depth_path, mask_path;
  auto* dif = app.add_subcommand("diffuse", "Semantic-masked depth diffusion");
  dif->add_option("--depth", depth_path, "Sparse depth raw tensor")->required();
  dif->add_option("--mask", mask_path, "Semantic mask raw tensor (u16)")->required();
  dif->add_option("--radius", o.cfg.radius_px)->check(CLI::NonNegativeNumber);
  dif->add_option("--out", o.out, "Output raw tensor")->required();
  add_common(dif, o);

  auto* lift = app.add_subcommand("lift", "Camera and LiDAR BEV features for a scene");
  lift->add_option("--scene", o.scene, "Scene JSON, or 'toy'");
  lift->add_option("--out", o.out, "Output directory")->required();
  add_discretization(lift, o);
  add_common(lift, o);

  std::string fuse_camera, fuse_lidar, direction = "camera_source", params_dir, dump_params;
  auto* fuse = app.add_subcommand("fuse", "Neighborhood attention + gated fusion");
  fuse->add_option("--camera", fuse_camera)->required();
  fuse->add_option("--lidar", fuse_lidar)->required();
  fuse->add_option("--direction", direction)
      ->check(CLI::IsMember({"camera_source", "lidar_source"}));
  fuse->add_option("--params", params_dir, "Directory of raw parameter tensors");
  fuse->add_option("--dump-params", dump_params, "Write the parameters used to this directory");
  fuse->add_option("--out", o.out, "Output raw tensor")->required();
  add_fusion(fuse, o);
  add_common(fuse, o);

  std::string fused_path, dcamera_path;
  auto* dist = app.add_subcommand("distill-weights", "AR/IR split, weights and loss");
  dist->add_option("--fused", fused_path);
  dist->add_option("--camera", dcamera_path);
  dist->add_option("--scene", o.scene, "Scene JSON, or 'toy' (when no maps are given)");
  dist->add_option("--out", o.out, "Output directory");
  add_distill(dist, o);
  add_discretization(dist, o);
  add_fusion(dist, o);
  add_common(dist, o);

  bool slices = false;
  auto* pred = app.add_subcommand("predict", "End-to-end occupancy prediction");
  pred->add_option("--scene", o.scene, "Scene JSON, or 'toy'");
  pred->add_option("--out", o.out, "Output directory")->required();
  pred->add_flag("--slices", slices, "Write one PGM per height slice");
  add_discretization(pred, o);
  add_fusion(pred, o);
  add_eval(pred, o);
  add_distill(pred, o);
  add_common(pred, o);

  std::string eval_pred, eval_truth, eval_mask, report_path, csv_path;
  auto* ev = app.add_subcommand("eval", "Score a prediction, or run and score a scene");
  ev->add_option("--pred", eval_pred);
  ev->add_option("--truth", eval_truth);
  ev->add_option("--mask", eval_mask, "Visibility mask raw tensor (u8)");
  ev->add_option("--scene", o.scene, "Scene JSON, or 'toy' (when no grids are given)");
  ev->add_option("--report", report_path, "JSON report path");
  ev->add_option("--csv", csv_path, "CSV report path");
  add_discretization(ev, o);
  add_fusion(ev, o);
  add_eval(ev, o);
  add_distill(ev, o);
  add_common(ev, o);

  bool sweep = false, include_zero = false;
  auto* pert = app.add_subcommand("perturb", "Extrinsic perturbation robustness sweep");
  pert->add_option("--scene", o.scene, "Scene JSON, or 'toy'");
  pert->add_option("--translation", o.cfg.perturb_translation, "Meters");
  pert->add_option("--rotation", o.cfg.perturb_rotation_deg, "Degrees");
  pert->add_option("--trials", o.cfg.perturb_trials);
  pert->add_option("--mode", o.mode)->check(CLI::IsMember({"per-frame", "per-sequence"}));
  pert->add_flag("--sweep", sweep, "Use 0.05/0.5, 0.1/1 and 0.2/2 (m/deg)");
  pert->add_flag("--zero", include_zero, "Also run a zero-magnitude control");
  pert->add_option("--out", o.out, "JSON report path");
  add_discretization(pert, o);
  add_fusion(pert, o);
  add_eval(pert, o);
  add_common(pert, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*proj) return cmd_project(o, points_path, camera_path);
    if (*dif) return cmd_diffuse(o, depth_path, mask_path);
    if (*lift) return cmd_lift(o);
    if (*fuse) return cmd_fuse(o, fuse_camera, fuse_lidar, direction, params_dir, dump_params);
    if (*dist) return cmd_distill(o, fused_path, dcamera_path);
    if (*pred) return cmd_predict(o, slices);
    if (*ev) return cmd_eval(o, eval_pred, eval_truth, eval_mask, report_path, csv_path);
    if (*pert) return cmd_perturb(o, sweep, include_zero);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
