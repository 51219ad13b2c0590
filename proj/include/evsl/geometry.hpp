#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "evsl/error.hpp"

namespace evsl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct PixelIndex {
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
  friend auto operator<=>(const PixelIndex& a, const PixelIndex& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

inline bool all_finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }
inline bool all_finite(const Vec3& v) { return v.allFinite(); }

/// Pinhole camera (or projector treated as an inverse camera).
///
/// Pose maps world to device coordinates: X_dev = rotation * X_world + translation.
/// Positions are in millimeters, pixel centers sit at integer coordinates.
/// Optional single radial coefficient k1 acts on normalized coordinates.
struct PinholeModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;
  int width = 1;
  int height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double k1 = 0.0;

  Mat3 intrinsic_matrix() const {
    Mat3 k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  /// Optical center in world coordinates.
  Vec3 center() const { return -rotation.transpose() * translation; }

  Vec3 to_device(const Vec3& world) const { return rotation * world + translation; }
  Vec3 direction_to_world(const Vec3& device_dir) const { return rotation.transpose() * device_dir; }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw Error(ErrorCode::invalid_argument, "pinhole model: focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw Error(ErrorCode::invalid_argument, "pinhole model: sensor size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
      throw Error(ErrorCode::invalid_argument, "pinhole model: principal point outside sensor");
    if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(k1) || !std::isfinite(skew))
      throw Error(ErrorCode::invalid_argument, "pinhole model: non-finite pose or coefficients");
    const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9)
      throw Error(ErrorCode::invalid_argument, "pinhole model: rotation is not a proper orthonormal matrix");
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Builds a world->device rotation for a device at `eye` looking at `target`.
/// Device axes: +z forward, +y down (image rows), +x right.
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up_hint = Vec3(0, -1, 0)) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = (-up_hint).cross(z);
  if (x.norm() < 1e-12) x = Vec3::UnitX().cross(z);
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

/// Places `model` at `eye` looking at `target`.
inline void set_pose_look_at(PinholeModel& model, const Vec3& eye, const Vec3& target,
                             const Vec3& up_hint = Vec3(0, -1, 0)) {
  model.rotation = look_at_rotation(eye, target, up_hint);
  model.translation = -model.rotation * eye;
}

namespace detail {

inline Vec2 distort(const Vec2& n, double k1) {
  if (k1 == 0.0) return n;
  return n * (1.0 + k1 * n.squaredNorm());
}

// Fixed-point inversion of the single-coefficient radial model.
inline Vec2 undistort(const Vec2& d, double k1) {
  if (k1 == 0.0) return d;
  Vec2 u = d;
  for (int i = 0; i < 8; ++i) u = d / (1.0 + k1 * u.squaredNorm());
  return u;
}

}  // namespace detail

/// Undistorted normalized coordinates (x/z, y/z) of a pixel.
inline Vec2 pixel_to_normalized(const PinholeModel& model, const Vec2& px) {
  const double yd = (px.y() - model.cy) / model.fy;
  const double xd = (px.x() - model.cx - model.skew * yd) / model.fx;
  return detail::undistort(Vec2(xd, yd), model.k1);
}

/// Device-frame ray direction with unit z component (not normalized).
inline Vec3 pixel_to_device_ray(const PinholeModel& model, const Vec2& px) {
  const Vec2 n = pixel_to_normalized(model, px);
  return Vec3(n.x(), n.y(), 1.0);
}

inline Ray pixel_to_ray(const PinholeModel& model, const Vec2& px) {
  if (!all_finite(px)) throw Error(ErrorCode::invalid_argument, "pixel_to_ray: non-finite pixel");
  if (px.x() < -1.0 || px.y() < -1.0 || px.x() > model.width || px.y() > model.height)
    throw Error(ErrorCode::invalid_argument, "pixel_to_ray: pixel outside sensor bounds");
  const Vec3 dir = model.direction_to_world(pixel_to_device_ray(model, px).normalized());
  return Ray{model.center(), dir.normalized()};
}

inline Vec2 project(const PinholeModel& model, const Vec3& point) {
  if (!all_finite(point)) throw Error(ErrorCode::invalid_argument, "project: non-finite point");
  const Vec3 d = model.to_device(point);
  if (!(d.z() > 1e-12))
    throw Error(ErrorCode::degenerate_projection, "project: point at or behind the optical center");
  const Vec2 n = detail::distort(Vec2(d.x() / d.z(), d.y() / d.z()), model.k1);
  return Vec2(model.fx * n.x() + model.skew * n.y() + model.cx, model.fy * n.y() + model.cy);
}

/// Depth of a world point along the device's optical axis.
inline double device_depth(const PinholeModel& model, const Vec3& point) {
  return model.to_device(point).z();
}

/// Maps projector pixels to camera epipolar lines: l_C = F * (x_P, y_P, 1).
struct FundamentalMatrix {
  Mat3 m = Mat3::Zero();

  Vec3 epipolar_line(const Vec2& projector_px) const { return m * projector_px.homogeneous(); }

  /// Point-to-line distance in camera pixels; invariant to scaling of m.
  double distance(const Vec2& camera_px, const Vec2& projector_px) const {
    const Vec3 l = epipolar_line(projector_px);
    const double norm = std::hypot(l.x(), l.y());
    if (norm == 0.0) return std::numeric_limits<double>::infinity();
    return std::abs(l.dot(camera_px.homogeneous())) / norm;
  }
};

inline Mat3 skew_symmetric(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

inline FundamentalMatrix fundamental_from_models(const PinholeModel& camera, const PinholeModel& projector) {
  // X_cam = R_rel X_proj + t_rel
  const Mat3 r_rel = camera.rotation * projector.rotation.transpose();
  const Vec3 t_rel = camera.translation - r_rel * projector.translation;
  const double scale = std::max({1.0, camera.translation.norm(), projector.translation.norm()});
  if (t_rel.norm() <= 1e-9 * scale)
    throw Error(ErrorCode::degenerate_geometry, "fundamental_from_models: zero baseline");
  const Mat3 essential = skew_symmetric(t_rel) * r_rel;
  Mat3 f = camera.intrinsic_matrix().inverse().transpose() * essential * projector.intrinsic_matrix().inverse();
  f /= f.norm();
  return FundamentalMatrix{f};
}

struct RayTriangulation {
  Vec3 point;
  double gap = 0.0;
};

/// Midpoint of the mutually closest segment between two rays.
inline RayTriangulation triangulate_rays(const Ray& a, const Ray& b) {
  const Vec3 cross = a.direction.cross(b.direction);
  const double condition = cross.norm();
  if (condition <= 1e-9)
    throw TriangulationError(condition, "triangulate_rays: rays are (near) parallel, |a x b| = " +
                                            std::to_string(condition));
  const Vec3 w0 = a.origin - b.origin;
  const double ab = a.direction.dot(b.direction);
  const double aa = a.direction.squaredNorm();
  const double bb = b.direction.squaredNorm();
  const double aw = a.direction.dot(w0);
  const double bw = b.direction.dot(w0);
  const double denom = aa * bb - ab * ab;
  const double s = (ab * bw - bb * aw) / denom;
  const double t = (aa * bw - ab * aw) / denom;
  const Vec3 pa = a.at(s);
  const Vec3 pb = b.at(t);
  return RayTriangulation{0.5 * (pa + pb), (pa - pb).norm()};
}

}  // namespace evsl
