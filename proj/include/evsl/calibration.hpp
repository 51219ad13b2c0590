#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

struct CheckerboardObservation {
  int board_id = 0;
  std::vector<Vec2> corners_camera;
  std::vector<Vec2> corners_board;  // mm on the board plane
  std::vector<Vec2> corners_projector;

  void validate() const {
    if (corners_board.size() < 4) throw Error(ErrorCode::invalid_argument, "checkerboard: need at least 4 corners");
    if (corners_camera.size() != corners_board.size())
      throw Error(ErrorCode::invalid_argument, "checkerboard: camera and board corner counts differ");
    if (!corners_projector.empty() && corners_projector.size() != corners_board.size())
      throw Error(ErrorCode::invalid_argument, "checkerboard: projector and board corner counts differ");
  }
};

enum class CalibrationTarget { camera, projector };

struct Homography {
  Mat3 h = Mat3::Identity();  // board -> image, h(2,2) = 1
  double rms = 0.0;           // reprojection residual, px
};

namespace detail {

/// Similarity taking points to zero mean and mean distance sqrt(2).
inline Mat3 normalizing_transform(const std::vector<Vec2>& pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Mat3 t;
  t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return t;
}

inline Vec2 apply(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * p.homogeneous();
  return q.hnormalized();
}

inline bool collinear(const std::vector<Vec2>& pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues();
  return !(ev(0) > 1e-12 * std::max(1.0, ev(1)));
}

}  // namespace detail

/// Normalized DLT homography mapping `src` to `dst`.
inline Homography estimate_homography(const std::vector<Vec2>& src, const std::vector<Vec2>& dst) {
  if (src.size() != dst.size() || src.size() < 4)
    throw Error(ErrorCode::invalid_argument, "estimate_homography: need >= 4 matching points");
  if (detail::collinear(src) || detail::collinear(dst))
    throw Error(ErrorCode::degenerate_geometry, "estimate_homography: collinear configuration");
  const Mat3 ts = detail::normalizing_transform(src);
  const Mat3 td = detail::normalizing_transform(dst);
  Eigen::MatrixXd a(2 * src.size(), 9);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec2 s = detail::apply(ts, src[i]);
    const Vec2 d = detail::apply(td, dst[i]);
    a.row(2 * i) << -s.x(), -s.y(), -1.0, 0.0, 0.0, 0.0, d.x() * s.x(), d.x() * s.y(), d.x();
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -s.x(), -s.y(), -1.0, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Mat3 hn;
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  Mat3 h = td.inverse() * hn * ts;
  if (std::abs(h(2, 2)) < 1e-15) throw Error(ErrorCode::degenerate_geometry, "estimate_homography: h33 vanishes");
  h /= h(2, 2);
  Homography out;
  out.h = h;
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += (detail::apply(h, src[i]) - dst[i]).squaredNorm();
  out.rms = std::sqrt(sum / src.size());
  return out;
}

inline Homography estimate_homography(const CheckerboardObservation& obs,
                                      CalibrationTarget target = CalibrationTarget::camera) {
  obs.validate();
  const auto& image = target == CalibrationTarget::camera ? obs.corners_camera : obs.corners_projector;
  if (image.empty()) throw Error(ErrorCode::invalid_argument, "estimate_homography: observation lacks projector corners");
  return estimate_homography(obs.corners_board, image);
}

struct BoardPose {
  Mat3 rotation = Mat3::Identity();  // board -> device
  Vec3 translation = Vec3::Zero();
};

struct IntrinsicCalibration {
  PinholeModel model;  // pose left at identity
  std::vector<BoardPose> board_poses;
  double mean_reprojection_error = 0.0;  // px
};

/// Zhang's closed-form planar calibration followed by per-board extrinsics.
inline IntrinsicCalibration zhang_intrinsics(const std::vector<CheckerboardObservation>& observations,
                                             CalibrationTarget target, int width, int height) {
  if (observations.size() < 3) throw Error(ErrorCode::unidentifiable, "zhang_intrinsics: need at least 3 boards");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::invalid_argument, "zhang_intrinsics: invalid sensor size");

  // Work in normalized image coordinates to keep the constraint system well conditioned.
  const double s = std::max(width, height);
  Mat3 t;
  t << 1.0 / s, 0.0, -0.5 * width / s, 0.0, 1.0 / s, -0.5 * height / s, 0.0, 0.0, 1.0;

  std::vector<Mat3> hs;
  for (const auto& obs : observations) hs.push_back(t * estimate_homography(obs, target).h);

  auto vij = [](const Mat3& h, int i, int j) {
    Eigen::Matrix<double, 6, 1> v;
    v << h(0, i) * h(0, j), h(0, i) * h(1, j) + h(1, i) * h(0, j), h(1, i) * h(1, j),
        h(2, i) * h(0, j) + h(0, i) * h(2, j), h(2, i) * h(1, j) + h(1, i) * h(2, j), h(2, i) * h(2, j);
    return v;
  };
  Eigen::MatrixXd v(2 * hs.size(), 6);
  for (std::size_t k = 0; k < hs.size(); ++k) {
    v.row(2 * k) = vij(hs[k], 0, 1).transpose();
    v.row(2 * k + 1) = (vij(hs[k], 0, 0) - vij(hs[k], 1, 1)).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(4) > 1e-8 * sv(0)))
    throw Error(ErrorCode::unidentifiable, "zhang_intrinsics: board orientations do not constrain the intrinsics");
  Eigen::Matrix<double, 6, 1> b = svd.matrixV().col(5);
  if (b(0) < 0.0) b = -b;
  const double b11 = b(0), b12 = b(1), b22 = b(2), b13 = b(3), b23 = b(4), b33 = b(5);
  const double den = b11 * b22 - b12 * b12;
  if (!(den > 0.0)) throw Error(ErrorCode::unidentifiable, "zhang_intrinsics: image of the absolute conic is not definite");
  const double v0 = (b12 * b13 - b11 * b23) / den;
  const double lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
  if (!(lambda / b11 > 0.0)) throw Error(ErrorCode::unidentifiable, "zhang_intrinsics: negative focal estimate");
  const double alpha = std::sqrt(lambda / b11);
  const double beta = std::sqrt(lambda * b11 / den);
  const double gamma = -b12 * alpha * alpha * beta / lambda;
  const double u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
  Mat3 kn;
  kn << alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0;
  Mat3 k = t.inverse() * kn;
  k /= k(2, 2);

  IntrinsicCalibration out;
  PinholeModel& m = out.model;
  m.fx = k(0, 0);
  m.skew = k(0, 1);
  m.cx = k(0, 2);
  m.fy = k(1, 1);
  m.cy = k(1, 2);
  m.width = width;
  m.height = height;

  const Mat3 kinv = k.inverse();
  double err = 0.0;
  std::size_t n = 0;
  for (std::size_t idx = 0; idx < observations.size(); ++idx) {
    const Mat3 h = t.inverse() * hs[idx];
    Vec3 r1 = kinv * h.col(0), r2 = kinv * h.col(1), tr = kinv * h.col(2);
    double scale = 1.0 / r1.norm();
    if (tr.z() * scale < 0.0) scale = -scale;
    r1 *= scale;
    r2 *= scale;
    tr *= scale;
    Mat3 r;
    r.col(0) = r1;
    r.col(1) = r2;
    r.col(2) = r1.cross(r2);
    Eigen::JacobiSVD<Mat3> rs(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r = rs.matrixU() * rs.matrixV().transpose();
    if (r.determinant() < 0.0) r = -r;
    out.board_poses.push_back({r, tr});

    const auto& obs = observations[idx];
    const auto& image = target == CalibrationTarget::camera ? obs.corners_camera : obs.corners_projector;
    for (std::size_t i = 0; i < obs.corners_board.size(); ++i) {
      const Vec3 pc = r * Vec3(obs.corners_board[i].x(), obs.corners_board[i].y(), 0.0) + tr;
      const Vec3 q = k * pc;
      err += (q.hnormalized() - image[i]).norm();
      ++n;
    }
  }
  out.mean_reprojection_error = n == 0 ? 0.0 : err / n;
  return out;
}

struct StereoCalibration {
  PinholeModel camera;     // world frame = camera frame
  PinholeModel projector;
  double camera_error = 0.0;     // mean reprojection error, px
  double projector_error = 0.0;
};

/// Intrinsics of both devices plus the projector pose relative to the camera, averaged over boards.
inline StereoCalibration stereo_calibration(const std::vector<CheckerboardObservation>& observations, int camera_width,
                                            int camera_height, int projector_width, int projector_height) {
  for (const auto& o : observations)
    if (o.corners_projector.empty())
      throw Error(ErrorCode::invalid_argument, "stereo_calibration: every board needs projector corners");
  const auto cam = zhang_intrinsics(observations, CalibrationTarget::camera, camera_width, camera_height);
  const auto proj = zhang_intrinsics(observations, CalibrationTarget::projector, projector_width, projector_height);
  Mat3 sum = Mat3::Zero();
  for (std::size_t i = 0; i < observations.size(); ++i)
    sum += proj.board_poses[i].rotation * cam.board_poses[i].rotation.transpose();
  Eigen::JacobiSVD<Mat3> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) = -u.col(2);
    r = u * svd.matrixV().transpose();
  }
  Vec3 t = Vec3::Zero();
  for (std::size_t i = 0; i < observations.size(); ++i)
    t += proj.board_poses[i].translation - r * cam.board_poses[i].translation;
  t /= static_cast<double>(observations.size());
  StereoCalibration out;
  out.camera = cam.model;
  out.projector = proj.model;
  out.projector.rotation = r;
  out.projector.translation = t;
  out.camera_error = cam.mean_reprojection_error;
  out.projector_error = proj.mean_reprojection_error;
  return out;
}

// ---------------------------------------------------------------------------
// Synchronization

struct SyncConfig {
  std::int64_t known_offset = 5000;
  std::int64_t burst_duration = 1000;
  std::size_t min_events = 10;

  void validate() const {
    if (!(known_offset > burst_duration && burst_duration >= 0))
      throw Error(ErrorCode::invalid_argument, "sync config: need known_offset > burst_duration >= 0");
    if (min_events < 1) throw Error(ErrorCode::invalid_argument, "sync config: min_events must be >= 1");
  }
};

/// Scan start = rounded mean timestamp of the first dense burst + known offset. A burst is a
/// maximal run of events whose consecutive gaps stay below burst_duration / 10.
inline std::int64_t detect_scan_start(const EventStream& events, const SyncConfig& cfg) {
  cfg.validate();
  const double max_gap = static_cast<double>(cfg.burst_duration) / 10.0;
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i + 1;
    while (j < events.size() &&
           (events[j].t == events[j - 1].t || static_cast<double>(events[j].t - events[j - 1].t) < max_gap))
      ++j;
    if (j - i >= cfg.min_events) {
      // Exact half-up rounding of the mean keeps the result shift-equivariant.
      const std::int64_t base = events[i].t;
      std::int64_t sum = 0;
      for (std::size_t k = i; k < j; ++k) sum += events[k].t - base;
      const auto n = static_cast<std::int64_t>(j - i);
      const std::int64_t num = 2 * sum + n, den = 2 * n;
      const std::int64_t q = num / den - ((num % den != 0 && (num < 0) != (den < 0)) ? 1 : 0);
      return base + q + cfg.known_offset;
    }
    i = j;
  }
  throw Error(ErrorCode::sync_not_found, "detect_scan_start: no sync burst with at least " +
                                             std::to_string(cfg.min_events) + " events");
}

// ---------------------------------------------------------------------------
// Synthetic boards

/// Corners of a rows x cols board with `square` mm pitch seen by camera (and projector).
/// `board_to_world` maps board-plane coordinates (x, y, 0) to world.
inline CheckerboardObservation render_board(int board_id, const Mat3& board_rotation, const Vec3& board_origin,
                                            int rows, int cols, double square, const PinholeModel& camera,
                                            const PinholeModel* projector = nullptr, double noise_px = 0.0,
                                            std::mt19937_64* rng = nullptr) {
  CheckerboardObservation obs;
  obs.board_id = board_id;
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto jitter = [&](Vec2 p) {
    if (noise_px > 0.0 && rng) p += noise_px * Vec2(gauss(*rng), gauss(*rng));
    return p;
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Vec2 b(c * square, r * square);
      const Vec3 w = board_rotation * Vec3(b.x(), b.y(), 0.0) + board_origin;
      obs.corners_board.push_back(b);
      obs.corners_camera.push_back(jitter(project(camera, w)));
      if (projector) obs.corners_projector.push_back(jitter(project(*projector, w)));
    }
  return obs;
}

}  // namespace evsl
