#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "occ/distillation.hpp"
#include "occ/fusion.hpp"
#include "occ/grid_spec.hpp"
#include "occ/losses.hpp"
#include "occ/metrics.hpp"
#include "occ/occupancy_head.hpp"
#include "occ/synthetic_scene.hpp"
#include "occ/view_transform.hpp"

namespace occ {

enum class PerturbationMode {
  per_frame,     // fresh perturbation for every frame
  per_sequence,  // one perturbation shared by all frames
};

struct PipelineConfig {
  VoxelGridSpec grid = VoxelGridSpec::toy();
  int radius_px = 7;
  DiscretizationParams discretization;  // 1 m, 8 layers per side
  int window = 7;
  AttentionScale attention_scale = AttentionScale::value_dim;
  double query_gain = 0.05;       // stand-in query projection gain * I
  double center_bias = 8.0;       // stand-in zero-offset bias, in scaled logit units
  double gate_bias = 10.0;        // stand-in gate: zero weights, this bias
  double depth_sigma = 0.25;      // stand-in depth head, meters
  double empty_logit = 0.5;       // logit assigned to the empty class
  double alpha = 1.0;
  double beta = 1.0;
  double occupancy_eps = 0.0;
  bool normalize_distill = false;
  LossWeights loss_weights;
  bool visible_mask = true;
  std::vector<double> distance_bins{2.0, 4.0};
  UndefinedIou undefined_iou = UndefinedIou::exclude;
  double perturb_translation = 0.1;
  double perturb_rotation_deg = 1.0;
  PerturbationMode perturb_mode = PerturbationMode::per_frame;
  int perturb_trials = 4;
  std::uint64_t seed = 0;

  // Throws ConfigError when any downstream parameter invariant fails.
  void validate() const;
};

// Applies the keys present in j on top of cfg, then validates.
void apply_config_json(const nlohmann::json& j, PipelineConfig& cfg);
nlohmann::json config_to_json(const PipelineConfig& cfg);

// Sensor data and references generated from a scene.
struct SceneData {
  SceneSpec spec;
  std::vector<LabeledPoint> points;
  std::vector<RenderedView> views;  // oracle semantics + depth per camera
  OccupancyGrid truth;
  VoxelMask visible;
};

SceneData prepare_scene(const SceneSpec& spec, const VoxelGridSpec& grid);

// BEV channel of (class_id, height bin): (class_id - 1) * depth_bins + bin.
// Feature maps carry class_count * depth_bins channels; the trailing empty
// class block stays zero.
std::size_t bev_channel(std::uint16_t class_id, std::size_t bin, std::size_t depth_bins);

// LiDAR BEV: 1 in the (class, height) channel of every cell containing a
// return of that class at that height.
BevFeatureMap lidar_bev(std::span<const LabeledPoint> points, const VoxelGridSpec& grid,
                        std::size_t class_count);

struct CameraStage {
  CoPointMaps copoints;
  DepthMap extended;
  DepthHypotheses hypotheses;
  ImageFeatureMap image;
};

// Co-point scatter, diffusion, discretization and stand-in image features for
// one camera. `assumed` is the extrinsics the pipeline believes; the oracle
// view always comes from the true camera.
CameraStage run_camera_stage(const SceneData& scene, std::size_t camera,
                             const Extrinsics& assumed, const PipelineConfig& cfg);

struct CameraBranch {
  BevFeatureMap bev;
  std::vector<CameraStage> stages;
  double depth_loss = 0.0;  // CE of depth logits vs the hypothesis nearest the oracle depth
  double seg_loss = 0.0;    // CE of stand-in semantic logits vs the oracle mask
};

CameraBranch run_camera_branch(const SceneData& scene, std::span<const Extrinsics> assumed,
                               const PipelineConfig& cfg);

// Fixed stand-in fusion parameters derived from the config.
AttentionParams stand_in_attention(std::size_t channels, const PipelineConfig& cfg);
GateParams stand_in_gate(std::size_t channels, const PipelineConfig& cfg);

// Occupancy logits from fused BEV features: channel-to-height, then the empty
// class plane is set to cfg.empty_logit.
OccupancyLogits occupancy_logits(const BevFeatureMap& fused, std::size_t class_count,
                                 const PipelineConfig& cfg);

struct EvalSummary {
  std::optional<double> binary_iou;
  IouReport semantic;
  std::uint64_t voxels = 0;
  std::vector<DistanceBinReport> bins;
};

EvalSummary evaluate(const OccupancyGrid& pred, const OccupancyGrid& truth,
                     const VoxelMask* visible, const PipelineConfig& cfg,
                     const Point3& ego);

struct FusionRun {
  OccupancyGrid prediction;
  BevFeatureMap camera_bev;
  BevFeatureMap lidar_bev;
  BevFeatureMap fused;
  EvalSummary eval;
  LossComponents losses;
  double total_loss = 0.0;
  nlohmann::json report;
};

// generate -> scatter -> diffuse -> discretize -> lift -> fuse (camera
// source) -> channel-to-height -> decode -> evaluate.
FusionRun run_fusion_pipeline(const PipelineConfig& cfg, const SceneSpec& scene);
FusionRun run_fusion_pipeline(const PipelineConfig& cfg, const SceneData& scene,
                              std::span<const Extrinsics> assumed);

struct KlRun {
  BevFeatureMap camera_bev;
  BevFeatureMap lidar_bev;
  BevFeatureMap fused;  // LiDAR-source fusion
  RegionSplit regions;
  DistillWeightMap weights;
  DistillLoss loss;
  double normalized_loss = 0.0;  // loss / sum(W), 0 when sum(W) = 0
  nlohmann::json report;
};

// Distillation weights and loss between the LiDAR-dominant fused map and the
// camera BEV map.
KlRun run_kl_path(const PipelineConfig& cfg, const SceneSpec& scene);
KlRun run_kl_from_maps(const PipelineConfig& cfg, const BevFeatureMap& camera,
                       const BevFeatureMap& lidar);
// Weights and loss for a given fused / camera pair.
KlRun distill_from_maps(const PipelineConfig& cfg, const BevFeatureMap& fused,
                        const BevFeatureMap& camera);

struct Magnitude {
  double translation = 0.0;    // meters
  double rotation_deg = 0.0;   // degrees
};

struct TrialResult {
  std::size_t frame = 0;
  double delta_iou = 0.0;
  double delta_miou = 0.0;
  double mean_displacement_px = 0.0;
};

struct MagnitudeReport {
  Magnitude magnitude;
  std::vector<TrialResult> trials;
  double mean_delta_iou = 0.0;
  double mean_delta_miou = 0.0;
  double worst_delta_iou = 0.0;
  double worst_delta_miou = 0.0;
  double mean_displacement_px = 0.0;
};

struct PerturbationReport {
  std::vector<MagnitudeReport> magnitudes;
  nlohmann::json report;
};

// Mean pixel displacement of LiDAR co-points between two extrinsics, over
// points that project into the image under both.
double mean_copoint_displacement(std::span<const LabeledPoint> points,
                                 const CameraIntrinsics& k, const Extrinsics& nominal,
                                 const Extrinsics& perturbed);

// Re-runs the fusion pipeline with perturbed camera extrinsics over
// cfg.perturb_trials frames (box-jittered copies of the scene) and reports the
// change in IoU / mIoU against the unperturbed run of the same frame.
PerturbationReport run_perturbation_sweep(const PipelineConfig& cfg, const SceneSpec& scene,
                                          std::span<const Magnitude> magnitudes);

std::string eval_csv(const EvalSummary& e);
nlohmann::json eval_json(const EvalSummary& e);

}  // namespace occ
