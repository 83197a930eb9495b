#include "occ/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Geometry>

#include "occ/error.hpp"
#include "occ/random.hpp"

namespace occ {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw ConfigError("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ConfigError("intrinsics: principal point outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

bool Extrinsics::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) {
    return false;
  }
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

void Extrinsics::validate(double tol) const {
  if (!is_valid(tol)) {
    throw ConfigError("extrinsics: rotation is not a proper orthonormal matrix");
  }
}

Eigen::Matrix4d Extrinsics::matrix() const {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = rotation;
  t.topRightCorner<3, 1>() = translation;
  return t;
}

Eigen::Vector3d Extrinsics::camera_center() const {
  return -rotation.transpose() * translation;
}

Extrinsics Extrinsics::inverse() const {
  Extrinsics inv;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.rotation * translation;
  return inv;
}

Extrinsics operator*(const Extrinsics& a, const Extrinsics& b) {
  Extrinsics out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

std::optional<PixelDepth> project_unbounded(const Point3& point,
                                            const Extrinsics& ex,
                                            const CameraIntrinsics& k) {
  const Eigen::Vector3d pc = ex.rotation * point.vec() + ex.translation;
  const double z = pc.z();
  if (!(z > kMinProjectionDepth)) return std::nullopt;
  return PixelDepth{k.fx * pc.x() / z + k.cx, k.fy * pc.y() / z + k.cy, z};
}

std::optional<PixelDepth> project(const Point3& point, const Extrinsics& ex,
                                  const CameraIntrinsics& k) {
  auto pd = project_unbounded(point, ex, k);
  if (!pd) return std::nullopt;
  if (!(pd->u >= 0.0 && pd->u < k.width && pd->v >= 0.0 && pd->v < k.height)) {
    return std::nullopt;
  }
  return pd;
}

Point3 back_project(const PixelDepth& pd, const Extrinsics& ex,
                    const CameraIntrinsics& k) {
  if (!(pd.depth > 0.0)) {
    throw std::invalid_argument("back_project: depth must be positive");
  }
  const Eigen::Vector3d pc((pd.u - k.cx) / k.fx * pd.depth,
                           (pd.v - k.cy) / k.fy * pd.depth, pd.depth);
  return Point3::from(ex.rotation.transpose() * (pc - ex.translation));
}

Eigen::Vector3d random_unit_vector(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

Extrinsics perturb_extrinsics(const Extrinsics& ex, double d_translation,
                              double d_rotation_deg, std::uint64_t seed) {
  if (!(d_translation >= 0.0) || !(d_rotation_deg >= 0.0)) {
    throw std::invalid_argument("perturb_extrinsics: magnitudes must be >= 0");
  }
  if (d_translation == 0.0 && d_rotation_deg == 0.0) return ex;

  Rng rng(seed);
  const Eigen::Vector3d direction = random_unit_vector(rng);
  const Eigen::Vector3d axis = random_unit_vector(rng);

  Extrinsics delta;
  delta.rotation =
      Eigen::AngleAxisd(d_rotation_deg * std::numbers::pi / 180.0, axis)
          .toRotationMatrix();
  delta.translation = d_translation * direction;
  return delta * ex;
}

double rotation_angle(const Eigen::Matrix3d& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace occ
