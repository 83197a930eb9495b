#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>

namespace occ {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static Point3 from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
  bool operator==(const Point3&) const = default;
};

// A LiDAR return tagged with the semantic class of the surface it hit.
// Class 0 means unlabeled.
struct LabeledPoint {
  Point3 position;
  std::uint16_t class_id = 0;
  bool operator==(const LabeledPoint&) const = default;
};

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame z, meters
};

// Pinhole intrinsics. Image size in pixels; pixel (row r, col c) covers
// [c, c+1) x [r, r+1) in continuous coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  Eigen::Matrix3d matrix() const;
};

// Rigid transform taking sensor/world coordinates into the camera frame:
// p_cam = rotation * p + translation.
struct Extrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Extrinsics identity() { return {}; }

  // Throws ConfigError unless rotation is orthonormal with det +1 within tol.
  void validate(double tol = 1e-9) const;
  bool is_valid(double tol = 1e-9) const;

  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d camera_center() const;
  Extrinsics inverse() const;
  // (a * b) applies b first.
  friend Extrinsics operator*(const Extrinsics& a, const Extrinsics& b);
};

struct CameraModel {
  CameraIntrinsics intrinsics;
  Extrinsics extrinsics;
};

// Projections with z at or below this value are treated as behind the camera.
inline constexpr double kMinProjectionDepth = 1e-6;

// Pixel and depth of a point, or nullopt when the point is behind the camera
// or falls outside [0, width) x [0, height).
std::optional<PixelDepth> project(const Point3& point, const Extrinsics& ex,
                                  const CameraIntrinsics& k);

// Same as project() without the image-bounds test.
std::optional<PixelDepth> project_unbounded(const Point3& point,
                                            const Extrinsics& ex,
                                            const CameraIntrinsics& k);

// Inverse of project(). Throws std::invalid_argument for depth <= 0.
Point3 back_project(const PixelDepth& pd, const Extrinsics& ex,
                    const CameraIntrinsics& k);

// Composes ex with a rigid perturbation applied in the camera frame: a
// translation of length d_translation (meters) along a uniformly random unit
// direction, and a rotation of d_rotation_deg degrees about a uniformly
// random axis. Deterministic in seed.
Extrinsics perturb_extrinsics(const Extrinsics& ex, double d_translation,
                              double d_rotation_deg, std::uint64_t seed);

// Rotation angle (radians) recovered from the trace.
double rotation_angle(const Eigen::Matrix3d& r);

// Uniformly distributed unit vector.
class Rng;
Eigen::Vector3d random_unit_vector(Rng& rng);

}  // namespace occ
