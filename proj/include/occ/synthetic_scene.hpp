#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "occ/geometry.hpp"
#include "occ/grid_spec.hpp"
#include "occ/metrics.hpp"
#include "occ/occupancy_head.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// Axis-aligned box primitive. Class ids start at 1; 0 is background.
struct Box {
  Point3 center;
  Point3 size;
  std::uint16_t class_id = 1;

  Eigen::Vector3d min_corner() const;
  Eigen::Vector3d max_corner() const;
  bool contains(const Eigen::Vector3d& p) const;
};

struct GroundSpec {
  bool enabled = true;
  double z_top = -0.7;
  double thickness = 0.3;
  std::uint16_t class_id = 1;
};

struct LidarSpec {
  Point3 origin{0.0, 0.0, 1.2};
  int rings = 48;
  double elevation_min_deg = -40.0;
  double elevation_max_deg = 15.0;
  double azimuth_step_deg = 0.5;
  double max_range = 50.0;
  double range_noise_sigma = 0.0;  // meters; 0 disables noise

  std::size_t azimuth_count() const;
  std::size_t ray_count() const;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double x_min = -4.0;
  double x_max = 4.0;
  double y_min = -4.0;
  double y_max = 4.0;
  int num_classes = 4;  // object classes 1..num_classes
  GroundSpec ground;
  std::vector<Box> boxes;
  std::vector<CameraModel> cameras;
  LidarSpec lidar;

  // Throws ConfigError when a box leaves the extent, a class id is out of
  // range, or a camera model is invalid.
  void validate() const;
  // Ground slab (when enabled) followed by the boxes.
  std::vector<Box> primitives() const;
  // Occupancy class count, including the trailing empty class.
  std::size_t class_count() const { return static_cast<std::size_t>(num_classes) + 1; }
};

struct RayHit {
  double t = 0.0;  // ray parameter of the nearest hit
  std::uint16_t class_id = 0;
  std::size_t primitive = 0;
};

// Nearest intersection with t > t_min, by the slab method.
std::optional<RayHit> cast_ray(const std::vector<Box>& primitives,
                               const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction,
                               double t_min = 1e-9);

// One return per ray that hits within max_range, in ray order (ring-major,
// then azimuth). Coordinates are in the scene frame.
std::vector<LabeledPoint> raycast_lidar(const SceneSpec& spec);

// Unit direction of ray (ring, azimuth index).
Eigen::Vector3d lidar_ray_direction(const LidarSpec& lidar, std::size_t ring,
                                    std::size_t azimuth);

struct RenderedView {
  SemanticMask labels;  // nearest-surface class per pixel, 0 = nothing hit
  DepthMap depth;       // exact camera-frame depth, 0 = nothing hit
};

// Casts one ray through each pixel centre.
RenderedView render_semantics_and_depth(const SceneSpec& spec, const CameraModel& cam);

// Nearest surface along the ray through continuous pixel (u, v). Returns the
// camera-frame depth and class.
std::optional<std::pair<double, std::uint16_t>> render_ray(
    const SceneSpec& spec, const CameraModel& cam, double u, double v);

// Voxel label = class of the primitive containing the voxel centre (boxes take
// precedence over the ground), or the empty class. Labels are class_id - 1.
OccupancyGrid ground_truth_occupancy(const SceneSpec& spec, const VoxelGridSpec& grid);

// Voxels traversed by any camera pixel ray up to and including the voxel of
// its first hit.
VoxelMask camera_visibility(const SceneSpec& spec, const VoxelGridSpec& grid);

// Camera looking horizontally along yaw (radians) from `position`.
CameraModel yaw_camera(const Point3& position, double yaw, const CameraIntrinsics& k);

// The frozen desk-scale scene used by the end-to-end tests: ground slab, two
// vehicles, a pedestrian and a wall on the toy 20 x 20 x 8 grid, one LiDAR and
// four surround cameras at the ego origin.
SceneSpec toy_scene();

// Copy of spec with every box shifted by a whole number of cells in x and y
// (at most max_cells each way), keeping boxes inside the extent.
SceneSpec jitter_boxes(const SceneSpec& spec, std::uint64_t seed, double cell,
                       int max_cells = 1);

}  // namespace occ
