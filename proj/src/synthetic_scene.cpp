#include "occ/synthetic_scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "occ/error.hpp"
#include "occ/parallel.hpp"
#include "occ/random.hpp"

namespace occ {

Eigen::Vector3d Box::min_corner() const {
  return center.vec() - 0.5 * size.vec();
}

Eigen::Vector3d Box::max_corner() const {
  return center.vec() + 0.5 * size.vec();
}

bool Box::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d lo = min_corner();
  const Eigen::Vector3d hi = max_corner();
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

std::size_t LidarSpec::azimuth_count() const {
  if (!(azimuth_step_deg > 0.0)) return 0;
  return static_cast<std::size_t>(std::llround(360.0 / azimuth_step_deg));
}

std::size_t LidarSpec::ray_count() const {
  return rings <= 0 ? 0 : static_cast<std::size_t>(rings) * azimuth_count();
}

void SceneSpec::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("scene: empty extent");
  if (num_classes < 1 || num_classes > 255) {
    throw ConfigError("scene: num_classes must be in [1, 255]");
  }
  constexpr double kTol = 1e-9;
  for (const auto& b : boxes) {
    if (!(b.size.x > 0.0 && b.size.y > 0.0 && b.size.z > 0.0)) {
      throw ConfigError("scene: box sizes must be positive");
    }
    const auto lo = b.min_corner();
    const auto hi = b.max_corner();
    if (lo.x() < x_min - kTol || hi.x() > x_max + kTol || lo.y() < y_min - kTol ||
        hi.y() > y_max + kTol) {
      throw ConfigError("scene: box outside the ground extent");
    }
    if (b.class_id < 1 || b.class_id > num_classes) {
      throw ConfigError("scene: box class id out of range");
    }
  }
  if (ground.enabled) {
    if (!(ground.thickness > 0.0)) throw ConfigError("scene: ground thickness must be > 0");
    if (ground.class_id < 1 || ground.class_id > num_classes) {
      throw ConfigError("scene: ground class id out of range");
    }
  }
  for (const auto& cam : cameras) {
    cam.intrinsics.validate();
    cam.extrinsics.validate();
  }
  if (lidar.rings < 0 || !(lidar.max_range > 0.0) ||
      !(lidar.range_noise_sigma >= 0.0) ||
      (lidar.rings > 0 && !(lidar.azimuth_step_deg > 0.0))) {
    throw ConfigError("scene: invalid lidar parameters");
  }
}

std::vector<Box> SceneSpec::primitives() const {
  std::vector<Box> prims;
  if (ground.enabled) {
    Box g;
    g.center = {0.5 * (x_min + x_max), 0.5 * (y_min + y_max),
                ground.z_top - 0.5 * ground.thickness};
    g.size = {x_max - x_min, y_max - y_min, ground.thickness};
    g.class_id = ground.class_id;
    prims.push_back(g);
  }
  prims.insert(prims.end(), boxes.begin(), boxes.end());
  return prims;
}

std::optional<RayHit> cast_ray(const std::vector<Box>& primitives,
                               const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction, double t_min) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Eigen::Vector3d lo = primitives[i].min_corner();
    const Eigen::Vector3d hi = primitives[i].max_corner();
    double t_enter = -std::numeric_limits<double>::infinity();
    double t_exit = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int a = 0; a < 3; ++a) {
      const double o = origin[a];
      const double d = direction[a];
      if (d == 0.0) {
        if (o < lo[a] || o > hi[a]) miss = true;
        continue;
      }
      double t0 = (lo[a] - o) / d;
      double t1 = (hi[a] - o) / d;
      if (t0 > t1) std::swap(t0, t1);
      t_enter = std::max(t_enter, t0);
      t_exit = std::min(t_exit, t1);
    }
    if (miss || t_enter > t_exit || !(t_enter > t_min)) continue;
    if (!best || t_enter < best->t) best = RayHit{t_enter, primitives[i].class_id, i};
  }
  return best;
}

Eigen::Vector3d lidar_ray_direction(const LidarSpec& lidar, std::size_t ring,
                                    std::size_t azimuth) {
  const double deg = std::numbers::pi / 180.0;
  const double elev =
      lidar.rings <= 1
          ? lidar.elevation_min_deg
          : lidar.elevation_min_deg + (lidar.elevation_max_deg - lidar.elevation_min_deg) *
                                          static_cast<double>(ring) / (lidar.rings - 1);
  const double az = static_cast<double>(azimuth) * lidar.azimuth_step_deg;
  return {std::cos(elev * deg) * std::cos(az * deg),
          std::cos(elev * deg) * std::sin(az * deg), std::sin(elev * deg)};
}

std::vector<LabeledPoint> raycast_lidar(const SceneSpec& spec) {
  spec.validate();
  const auto prims = spec.primitives();
  const LidarSpec& lidar = spec.lidar;
  const std::size_t n_az = lidar.azimuth_count();
  const std::size_t n_rays = lidar.ray_count();
  const Eigen::Vector3d origin = lidar.origin.vec();

  std::vector<std::optional<LabeledPoint>> hits(n_rays);
  parallel_for(0, n_rays, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t ray = lo; ray < hi; ++ray) {
      const Eigen::Vector3d dir = lidar_ray_direction(lidar, ray / n_az, ray % n_az);
      const auto hit = cast_ray(prims, origin, dir);
      if (!hit || hit->t > lidar.max_range) continue;
      double range = hit->t;
      if (lidar.range_noise_sigma > 0.0) {
        Rng rng(mix_seed(spec.seed, ray));
        range = std::max(0.0, range + lidar.range_noise_sigma * rng.normal());
      }
      hits[ray] = LabeledPoint{Point3::from(origin + range * dir), hit->class_id};
    }
  }, 1024);

  std::vector<LabeledPoint> points;
  for (const auto& h : hits) {
    if (h) points.push_back(*h);
  }
  return points;
}

namespace {

struct WorldRay {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // scaled so camera-frame z advances by 1 per unit t
};

WorldRay pixel_ray(const CameraModel& cam, double u, double v) {
  const auto& k = cam.intrinsics;
  const Eigen::Vector3d dc((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  return {cam.extrinsics.camera_center(), cam.extrinsics.rotation.transpose() * dc};
}

}  // namespace

std::optional<std::pair<double, std::uint16_t>> render_ray(
    const SceneSpec& spec, const CameraModel& cam, double u, double v) {
  const WorldRay ray = pixel_ray(cam, u, v);
  const auto hit = cast_ray(spec.primitives(), ray.origin, ray.direction);
  if (!hit) return std::nullopt;
  return std::make_pair(hit->t, hit->class_id);
}

RenderedView render_semantics_and_depth(const SceneSpec& spec, const CameraModel& cam) {
  cam.intrinsics.validate();
  const auto prims = spec.primitives();
  const auto rows = static_cast<std::size_t>(cam.intrinsics.height);
  const auto cols = static_cast<std::size_t>(cam.intrinsics.width);
  RenderedView view{SemanticMask({rows, cols}, 0), DepthMap({rows, cols}, 0.0)};
  parallel_for(0, rows, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const WorldRay ray = pixel_ray(cam, c + 0.5, r + 0.5);
        const auto hit = cast_ray(prims, ray.origin, ray.direction);
        if (!hit) continue;
        view.labels(r, c) = hit->class_id;
        view.depth(r, c) = hit->t;
      }
    }
  });
  return view;
}

OccupancyGrid ground_truth_occupancy(const SceneSpec& spec, const VoxelGridSpec& grid) {
  spec.validate();
  grid.validate();
  const std::size_t rows = grid.bev.rows();
  const std::size_t cols = grid.bev.cols();
  const std::size_t depth = grid.depth_bins();
  OccupancyGrid out = empty_grid(rows, cols, depth, spec.class_count());

  // Boxes first so that objects resting on the ground keep their own class.
  std::vector<Box> order(spec.boxes.begin(), spec.boxes.end());
  if (spec.ground.enabled) order.push_back(spec.primitives().front());

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t z = 0; z < depth; ++z) {
        const Eigen::Vector3d p(grid.bev.cell_center_x(c), grid.bev.cell_center_y(r),
                                grid.cell_center_z(z));
        for (const auto& b : order) {
          if (b.contains(p)) {
            out.labels(r, c, z) = static_cast<std::uint8_t>(b.class_id - 1);
            break;
          }
        }
      }
    }
  }
  return out;
}

namespace {

// Amanatides-Woo traversal of [t_begin, t_end] along the ray, marking every
// voxel entered.
void mark_traversal(const VoxelGridSpec& grid, const Eigen::Vector3d& origin,
                    const Eigen::Vector3d& dir, double t_end, VoxelMask& mask) {
  const Eigen::Vector3d lo(grid.bev.x_min, grid.bev.y_min, grid.z_min);
  const Eigen::Vector3d hi(grid.bev.x_max, grid.bev.y_max, grid.z_max);
  const std::array<long, 3> dims{static_cast<long>(grid.bev.cols()),
                                 static_cast<long>(grid.bev.rows()),
                                 static_cast<long>(grid.depth_bins())};
  const double cell = grid.bev.cell;

  double t0 = 0.0;
  double t1 = t_end;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < lo[a] || origin[a] >= hi[a]) return;
      continue;
    }
    double ta = (lo[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return;

  const Eigen::Vector3d start = origin + t0 * dir;
  std::array<long, 3> idx{};
  std::array<long, 3> step{};
  std::array<double, 3> t_max{};
  std::array<double, 3> t_delta{};
  for (int a = 0; a < 3; ++a) {
    idx[a] = std::clamp(static_cast<long>(std::floor((start[a] - lo[a]) / cell)), 0L,
                        dims[a] - 1);
    if (dir[a] > 0.0) {
      step[a] = 1;
      t_max[a] = (lo[a] + (idx[a] + 1) * cell - origin[a]) / dir[a];
      t_delta[a] = cell / dir[a];
    } else if (dir[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (lo[a] + idx[a] * cell - origin[a]) / dir[a];
      t_delta[a] = -cell / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  while (true) {
    // Mask layout is rows(y) x cols(x) x height(z).
    mask(static_cast<std::size_t>(idx[1]), static_cast<std::size_t>(idx[0]),
         static_cast<std::size_t>(idx[2])) = 1;
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    if (t_max[a] > t1) break;
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= dims[a]) break;
    t_max[a] += t_delta[a];
  }
}

}  // namespace

VoxelMask camera_visibility(const SceneSpec& spec, const VoxelGridSpec& grid) {
  grid.validate();
  const auto prims = spec.primitives();
  VoxelMask mask({grid.bev.rows(), grid.bev.cols(), grid.depth_bins()}, 0);
  constexpr double kHitSlack = 1e-6;
  for (const auto& cam : spec.cameras) {
    const auto& k = cam.intrinsics;
    for (int r = 0; r < k.height; ++r) {
      for (int c = 0; c < k.width; ++c) {
        const WorldRay ray = pixel_ray(cam, c + 0.5, r + 0.5);
        const auto hit = cast_ray(prims, ray.origin, ray.direction);
        const double t_end =
            hit ? hit->t + kHitSlack : std::numeric_limits<double>::infinity();
        mark_traversal(grid, ray.origin, ray.direction, t_end, mask);
      }
    }
  }
  return mask;
}

CameraModel yaw_camera(const Point3& position, double yaw, const CameraIntrinsics& k) {
  const Eigen::Vector3d forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Eigen::Vector3d right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Eigen::Vector3d down(0.0, 0.0, -1.0);
  CameraModel cam;
  cam.intrinsics = k;
  cam.extrinsics.rotation.row(0) = right.transpose();
  cam.extrinsics.rotation.row(1) = down.transpose();
  cam.extrinsics.rotation.row(2) = forward.transpose();
  cam.extrinsics.translation = -cam.extrinsics.rotation * position.vec();
  return cam;
}

namespace {

// Box whose faces sit 0.1 m inside the lattice cells they occupy, so surface
// samples fall into voxels whose centres are inside the box.
Box lattice_box(double x0, double x1, double y0, double y1, double z0, double z1,
                std::uint16_t cls) {
  Box b;
  b.center = {0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * (z0 + z1)};
  b.size = {x1 - x0, y1 - y0, z1 - z0};
  b.class_id = cls;
  return b;
}

}  // namespace

SceneSpec toy_scene() {
  SceneSpec s;
  s.seed = 7;
  s.num_classes = 4;  // 1 ground, 2 vehicle, 3 pedestrian, 4 structure
  s.ground = GroundSpec{true, -0.7, 0.3, 1};
  s.boxes = {
      lattice_box(1.7, 3.1, -1.1, 0.7, -0.7, 0.5, 2),
      lattice_box(-0.7, 0.7, 2.5, 3.5, -0.7, 0.5, 2),
      lattice_box(-2.3, -2.1, 1.7, 1.9, -0.7, 1.3, 3),
      lattice_box(-3.5, -2.9, -3.1, -0.5, -0.7, 1.7, 4),
  };
  const CameraIntrinsics k{48.0, 48.0, 48.0, 32.0, 96, 64};
  const Point3 mount{0.0, 0.0, 1.2};
  for (int i = 0; i < 4; ++i) {
    s.cameras.push_back(yaw_camera(mount, i * std::numbers::pi / 2.0, k));
  }
  s.lidar = LidarSpec{};
  s.lidar.origin = mount;
  return s;
}

SceneSpec jitter_boxes(const SceneSpec& spec, std::uint64_t seed, double cell,
                       int max_cells) {
  SceneSpec out = spec;
  Rng rng(mix_seed(seed, 0x6a177e5ULL));
  const auto draw = [&]() {
    return static_cast<int>(rng.next() % static_cast<std::uint64_t>(2 * max_cells + 1)) -
           max_cells;
  };
  const auto overlaps = [](const Box& a, const Box& b) {
    const auto alo = a.min_corner(), ahi = a.max_corner();
    const auto blo = b.min_corner(), bhi = b.max_corner();
    return alo.x() < bhi.x() && blo.x() < ahi.x() && alo.y() < bhi.y() &&
           blo.y() < ahi.y() && alo.z() < bhi.z() && blo.z() < ahi.z();
  };
  for (std::size_t i = 0; i < out.boxes.size(); ++i) {
    Box& b = out.boxes[i];
    const double dx = draw() * cell;
    const double dy = draw() * cell;
    Box moved = b;
    moved.center.x += dx;
    moved.center.y += dy;
    const auto lo = moved.min_corner();
    const auto hi = moved.max_corner();
    const Eigen::Vector3d ego = spec.lidar.origin.vec();
    const bool inside = lo.x() >= spec.x_min && hi.x() <= spec.x_max &&
                        lo.y() >= spec.y_min && hi.y() <= spec.y_max;
    const bool covers_ego = ego.x() >= lo.x() && ego.x() <= hi.x() &&
                            ego.y() >= lo.y() && ego.y() <= hi.y();
    bool clear = inside && !covers_ego;
    for (std::size_t j = 0; clear && j < out.boxes.size(); ++j) {
      if (j != i && overlaps(moved, out.boxes[j])) clear = false;
    }
    if (clear) b = moved;
  }
  return out;
}

}  // namespace occ
