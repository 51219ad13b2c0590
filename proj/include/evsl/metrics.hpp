#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "evsl/error.hpp"
#include "evsl/events.hpp"
#include "evsl/geometry.hpp"
#include "evsl/separation.hpp"

namespace evsl {

enum class FitModel { plane, sphere };

inline std::string_view to_string(FitModel m) { return m == FitModel::plane ? "plane" : "sphere"; }

struct FitReport {
  FitModel model = FitModel::plane;
  Vec3 point = Vec3::Zero();   // plane: centroid of inliers
  Vec3 normal = Vec3::UnitZ();
  Vec3 center = Vec3::Zero();  // sphere
  double radius = 0.0;
  double rmse = 0.0;
  std::size_t inlier_count = 0;
  double rejected_fraction = 0.0;

  double signed_distance(const Vec3& p) const {
    return model == FitModel::plane ? (p - point).dot(normal) : (p - center).norm() - radius;
  }
};

struct FitOptions {
  double reject_sigma = 0.0;  // > 0 enables iterative k-sigma rejection
  int max_rounds = 10;
};

namespace detail {

inline FitReport fit_plane_once(const std::vector<Vec3>& pts) {
  if (pts.size() < 3) throw Error(ErrorCode::degenerate_geometry, "fit_plane: need at least 3 points");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Eigen::MatrixXd a(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) a.row(i) = (pts[i] - centroid).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (!(s(1) > 1e-9 * std::max(1.0, s(0))))
    throw Error(ErrorCode::degenerate_geometry, "fit_plane: points are collinear");
  FitReport r;
  r.model = FitModel::plane;
  r.point = centroid;
  r.normal = svd.matrixV().col(2).normalized();
  return r;
}

inline FitReport fit_sphere_once(const std::vector<Vec3>& pts) {
  if (pts.size() < 4) throw Error(ErrorCode::degenerate_geometry, "fit_sphere: need at least 4 points");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Eigen::MatrixXd spread(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) spread.row(i) = (pts[i] - centroid).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(spread).singularValues();
  if (!(sv(2) > 1e-9 * std::max(1.0, sv(0))))
    throw Error(ErrorCode::degenerate_geometry, "fit_sphere: points are coplanar");

  // Algebraic fit on centred coordinates: |q|^2 + D.q + G = 0.
  Eigen::MatrixXd a(pts.size(), 4);
  Eigen::VectorXd b(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 q = pts[i] - centroid;
    a.row(i) << q.x(), q.y(), q.z(), 1.0;
    b(i) = -q.squaredNorm();
  }
  const Eigen::Vector4d x = a.colPivHouseholderQr().solve(b);
  Vec3 c = -0.5 * x.head<3>();
  double rad = std::sqrt(std::max(0.0, c.squaredNorm() - x(3)));

  // Gauss-Newton on geometric distance.
  for (int it = 0; it < 10; ++it) {
    Eigen::MatrixXd j(pts.size(), 4);
    Eigen::VectorXd res(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 d = pts[i] - centroid - c;
      const double n = d.norm();
      res(i) = n - rad;
      if (n > 0.0)
        j.row(i) << -d.x() / n, -d.y() / n, -d.z() / n, -1.0;
      else
        j.row(i) << 0.0, 0.0, 0.0, -1.0;
    }
    const Eigen::Vector4d step = j.colPivHouseholderQr().solve(-res);
    c += step.head<3>();
    rad += step(3);
    if (step.norm() < 1e-14 * std::max(1.0, rad)) break;
  }
  FitReport r;
  r.model = FitModel::sphere;
  r.center = c + centroid;
  r.radius = std::abs(rad);
  return r;
}

inline double rms_of(const std::vector<Vec3>& pts, const FitReport& f) {
  double s = 0.0;
  for (const auto& p : pts) s += f.signed_distance(p) * f.signed_distance(p);
  return pts.empty() ? 0.0 : std::sqrt(s / pts.size());
}

template <typename Once>
FitReport fit_with_rejection(const std::vector<Vec3>& pts, const FitOptions& options, Once once) {
  std::vector<Vec3> inliers = pts;
  FitReport f = once(inliers);
  for (int round = 0; options.reject_sigma > 0.0 && round < options.max_rounds; ++round) {
    const double limit = options.reject_sigma * rms_of(inliers, f);
    std::vector<Vec3> next;
    next.reserve(inliers.size());
    for (const auto& p : inliers)
      if (std::abs(f.signed_distance(p)) <= limit) next.push_back(p);
    if (next.size() == inliers.size()) break;
    inliers = std::move(next);
    f = once(inliers);
  }
  f.rmse = rms_of(inliers, f);
  f.inlier_count = inliers.size();
  f.rejected_fraction = pts.empty() ? 0.0 : 1.0 - static_cast<double>(inliers.size()) / pts.size();
  return f;
}

}  // namespace detail

/// Total-least-squares plane (smallest principal component).
inline FitReport fit_plane(const std::vector<Vec3>& points, const FitOptions& options = {}) {
  return detail::fit_with_rejection(points, options, detail::fit_plane_once);
}

/// Algebraic sphere refined by 10 Gauss-Newton steps on geometric distance.
inline FitReport fit_sphere(const std::vector<Vec3>& points, const FitOptions& options = {}) {
  return detail::fit_with_rejection(points, options, detail::fit_sphere_once);
}

inline std::vector<double> signed_residuals(const std::vector<Vec3>& points, const FitReport& fit) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(fit.signed_distance(p));
  return out;
}

/// Population standard deviation of the signed residuals to `fit`.
inline double precision(const std::vector<Vec3>& points, const FitReport& fit) {
  if (points.size() < 2) return 0.0;
  const auto r = signed_residuals(points, fit);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= r.size();
  double s = 0.0;
  for (double v : r) s += (v - mean) * (v - mean);
  return std::sqrt(s / r.size());
}

/// RMS distance of points to an analytic reference surface.
inline double rmse_to(const std::vector<Vec3>& points, const FitReport& reference) {
  return detail::rms_of(points, reference);
}

// ---------------------------------------------------------------------------
// Classification against simulator ground truth

enum class TruthClass { direct, indirect };

/// Ground-truth class of a correspondence from the annotations of its median events; empty
/// when either event is unannotated (noise). Direct means both sweeps saw the same
/// single-bounce point.
inline std::optional<TruthClass> truth_class(const PixelCorrespondence& c, const GroundTruth& truth) {
  auto annotation = [&](std::size_t e) -> const EventAnnotation* {
    if (e == kNoEvent || e >= truth.size() || !truth[e]) return nullptr;
    return &*truth[e];
  };
  const EventAnnotation* v = annotation(c.event_v);
  if (!v) return std::nullopt;
  if (c.event_h == kNoEvent) return v->bounce_count == 1 ? TruthClass::direct : TruthClass::indirect;
  const EventAnnotation* h = annotation(c.event_h);
  if (!h) return std::nullopt;
  const bool same = (v->source_point - h->source_point).norm() <= 1e-9;
  return v->bounce_count == 1 && h->bounce_count == 1 && same ? TruthClass::direct : TruthClass::indirect;
}

struct ClassScore {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;

  double precision() const {
    const auto d = true_positive + false_positive;
    return d == 0 ? 1.0 : static_cast<double>(true_positive) / d;
  }
  double recall() const {
    const auto d = true_positive + false_negative;
    return d == 0 ? 1.0 : static_cast<double>(true_positive) / d;
  }
};

struct ClassificationScore {
  ClassScore direct;
  ClassScore indirect;
  std::size_t confusion[3][2] = {};  // [predicted direct/indirect/rejected][truth direct/indirect]
  std::size_t excluded = 0;          // correspondences built from noise events
};

inline ClassificationScore classification_score(const std::vector<ClassifiedCorrespondence>& classified,
                                                const EventStream& events, const GroundTruth& truth) {
  if (truth.size() != events.size())
    throw Error(ErrorCode::invalid_argument, "classification_score: ground truth and event stream lengths differ");
  if (classified.empty()) throw Error(ErrorCode::invalid_argument, "classification_score: empty input");
  ClassificationScore s;
  for (const auto& c : classified) {
    const auto t = truth_class(c.base, truth);
    if (!t) {
      ++s.excluded;
      continue;
    }
    const int pred = static_cast<int>(c.cls);
    const int tr = static_cast<int>(*t);
    ++s.confusion[pred][tr];
    const bool pd = c.cls == CorrespondenceClass::direct, pi = c.cls == CorrespondenceClass::indirect;
    const bool td = *t == TruthClass::direct;
    if (pd && td) ++s.direct.true_positive;
    if (pd && !td) ++s.direct.false_positive;
    if (!pd && td) ++s.direct.false_negative;
    if (pi && !td) ++s.indirect.true_positive;
    if (pi && td) ++s.indirect.false_positive;
    if (!pi && !td) ++s.indirect.false_negative;
  }
  return s;
}

}  // namespace evsl
