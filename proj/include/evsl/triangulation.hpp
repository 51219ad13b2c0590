#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "evsl/error.hpp"
#include "evsl/geometry.hpp"
#include "evsl/separation.hpp"

namespace evsl {

struct DiffusePoint {
  Vec3 position = Vec3::Zero();
  PixelIndex camera_pixel;
  Vec2 projector_pixel = Vec2::Zero();
  double gap = 0.0;
  double quality = 1.0;
};

struct Rejection {
  std::size_t index;  // position in the input table
  std::string reason;
};

struct TriangulationResult {
  std::vector<DiffusePoint> points;
  std::vector<Rejection> rejections;
};

struct TriangulationOptions {
  double g_max = 1.0;  // mm
};

/// Intersection of a camera ray with the laser plane of projector column u.
inline RayTriangulation intersect_column_plane(const Ray& camera_ray, const PinholeModel& projector, double u) {
  const Ray top = pixel_to_ray(projector, Vec2(u, 0.0));
  const Ray bottom = pixel_to_ray(projector, Vec2(u, projector.height - 1.0));
  const Vec3 normal = top.direction.cross(bottom.direction).normalized();
  const double denom = normal.dot(camera_ray.direction);
  if (std::abs(denom) <= 1e-9)
    throw TriangulationError(std::abs(denom), "camera ray parallel to laser plane");
  const double t = normal.dot(top.origin - camera_ray.origin) / denom;
  return RayTriangulation{camera_ray.at(t), 0.0};
}

/// Triangulates correspondences; single-sweep entries use the laser plane of their column.
inline TriangulationResult triangulate_correspondences(const std::vector<PixelCorrespondence>& table,
                                                       const PinholeModel& camera, const PinholeModel& projector,
                                                       const TriangulationOptions& options = {}) {
  TriangulationResult out;
  char reason[160];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& c = table[i];
    try {
      const Ray cam = pixel_to_ray(camera, Vec2(c.camera.x, c.camera.y));
      const RayTriangulation r = c.has_row() ? triangulate_rays(cam, pixel_to_ray(projector, c.projector))
                                             : intersect_column_plane(cam, projector, c.projector.x());
      if (!all_finite(r.point)) {
        out.rejections.push_back({i, "non-finite point"});
        continue;
      }
      if (device_depth(camera, r.point) <= 0.0) {
        out.rejections.push_back({i, "point behind camera"});
        continue;
      }
      if (r.gap > options.g_max) {
        std::snprintf(reason, sizeof reason, "gap %.6g mm exceeds g_max %.6g mm", r.gap, options.g_max);
        out.rejections.push_back({i, reason});
        continue;
      }
      out.points.push_back(DiffusePoint{r.point, c.camera, c.projector, r.gap, c.quality});
    } catch (const TriangulationError& e) {
      std::snprintf(reason, sizeof reason, "unstable triangulation (condition %.3g)", e.condition());
      out.rejections.push_back({i, reason});
    } catch (const Error& e) {
      out.rejections.push_back({i, e.what()});
    }
  }
  return out;
}

/// Triangulates the direct entries of a classified table; rejection indices refer to `classified`.
inline TriangulationResult triangulate_direct(const std::vector<ClassifiedCorrespondence>& classified,
                                              const PinholeModel& camera, const PinholeModel& projector,
                                              const TriangulationOptions& options = {}) {
  std::vector<PixelCorrespondence> direct;
  std::vector<std::size_t> origin;
  for (std::size_t i = 0; i < classified.size(); ++i)
    if (classified[i].cls == CorrespondenceClass::direct) {
      direct.push_back(classified[i].base);
      origin.push_back(i);
    }
  auto r = triangulate_correspondences(direct, camera, projector, options);
  for (auto& rej : r.rejections) rej.index = origin[rej.index];
  return r;
}

/// Triangulated diffuse points keyed by the projector pixel that lit them.
class VirtualScreen {
 public:
  using Key = std::pair<int, int>;  // (round y_P, round x_P)

  static Key key_of(const Vec2& projector) {
    return {static_cast<int>(std::lround(projector.y())), static_cast<int>(std::lround(projector.x()))};
  }

  void insert(const DiffusePoint& p) {
    auto [it, fresh] = entries_.try_emplace(key_of(p.projector_pixel), p);
    if (fresh) return;
    const DiffusePoint& old = it->second;
    if (p.quality > old.quality || (p.quality == old.quality && p.gap < old.gap)) it->second = p;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<Key, DiffusePoint>& entries() const { return entries_; }

  const DiffusePoint* find(const Vec2& projector) const {
    auto it = entries_.find(key_of(projector));
    return it == entries_.end() ? nullptr : &it->second;
  }

  /// Screen point lit at real projector coordinate (u, v): least-squares fit (quadratic with
  /// enough support, else affine) over entries within `reach_px`, skipping entries across
  /// depth jumps of more than `continuity_mm` per projector pixel.
  std::optional<Vec3> lookup(const Vec2& projector, double continuity_mm = 3.0, int reach_px = 4) const {
    if (entries_.empty()) return std::nullopt;
    const Key k = key_of(projector);
    const DiffusePoint* nearest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    std::vector<const DiffusePoint*> window;
    for (int dy = -reach_px; dy <= reach_px; ++dy) {
      auto it = entries_.lower_bound({k.first + dy, k.second - reach_px});
      const auto end = entries_.upper_bound({k.first + dy, k.second + reach_px});
      for (; it != end; ++it) {
        const DiffusePoint& p = it->second;
        const double d = (p.projector_pixel - projector).norm();
        if (d > reach_px) continue;
        window.push_back(&p);
        if (d < best) {
          best = d;
          nearest = &p;
        }
      }
    }
    if (!nearest) return std::nullopt;
    std::vector<const DiffusePoint*> used;
    for (const DiffusePoint* p : window) {
      const double px = std::max(1.0, (p->projector_pixel - nearest->projector_pixel).norm());
      if ((p->position - nearest->position).norm() <= continuity_mm * px) used.push_back(p);
    }
    const int terms = used.size() >= 12 ? 6 : 3;
    if (static_cast<int>(used.size()) < terms) return best <= 0.5 ? std::optional<Vec3>(nearest->position) : std::nullopt;
    Eigen::MatrixXd a(used.size(), terms);
    Eigen::MatrixXd b(used.size(), 3);
    for (std::size_t i = 0; i < used.size(); ++i) {
      const Vec2 d = used[i]->projector_pixel - projector;
      if (terms == 6)
        a.row(i) << 1.0, d.x(), d.y(), d.x() * d.x(), d.x() * d.y(), d.y() * d.y();
      else
        a.row(i) << 1.0, d.x(), d.y();
      b.row(i) = used[i]->position.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(terms - 1) < 1e-6 * sv(0)) return best <= 0.5 ? std::optional<Vec3>(nearest->position) : std::nullopt;
    const Eigen::MatrixXd coef = svd.solve(b);
    return Vec3(coef.row(0).transpose());
  }

 private:
  std::map<Key, DiffusePoint> entries_;
};

inline VirtualScreen build_virtual_screen(const std::vector<DiffusePoint>& points) {
  VirtualScreen screen;
  for (const auto& p : points)
    if (p.projector_pixel.y() >= 0.0) screen.insert(p);
  return screen;
}

inline void write_virtual_screen(std::ostream& out, const VirtualScreen& screen) {
  out << "# key_x key_y x y z x_C y_C x_P y_P gap quality\n";
  char buf[400];
  for (const auto& [key, p] : screen.entries()) {
    const int n = std::snprintf(buf, sizeof buf, "%d %d %.17g %.17g %.17g %d %d %.17g %.17g %.17g %.17g\n", key.second,
                                key.first, p.position.x(), p.position.y(), p.position.z(), p.camera_pixel.x,
                                p.camera_pixel.y, p.projector_pixel.x(), p.projector_pixel.y(), p.gap, p.quality);
    out.write(buf, n);
  }
}

// ---------------------------------------------------------------------------
// ASCII PLY

inline void write_points_ply(std::ostream& out, const std::vector<DiffusePoint>& points) {
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property int cam_x\nproperty int cam_y\nproperty double proj_x\nproperty double proj_y\n"
         "property double gap\nproperty double quality\nend_header\n";
  char buf[400];
  for (const auto& p : points) {
    const int n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d %.17g %.17g %.17g %.17g\n",
                                p.position.x(), p.position.y(), p.position.z(), p.camera_pixel.x, p.camera_pixel.y,
                                p.projector_pixel.x(), p.projector_pixel.y(), p.gap, p.quality);
    out.write(buf, n);
  }
}

namespace detail {

struct PlyHeader {
  std::size_t count = 0;
  std::vector<std::string> properties;
};

inline PlyHeader read_ply_header(std::istream& in, const std::string& source) {
  PlyHeader h;
  std::string line;
  std::size_t number = 0;
  bool magic = false;
  bool vertex = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1) {
      if (line != "ply") throw schema_error(source, number, "magic", "not a PLY file");
      magic = true;
      continue;
    }
    std::istringstream f(line);
    std::string word;
    f >> word;
    if (word == "format") {
      std::string kind;
      f >> kind;
      if (kind != "ascii") throw schema_error(source, number, "format", "only ascii PLY is supported");
    } else if (word == "element") {
      std::string name;
      f >> name;
      vertex = name == "vertex";
      if (vertex && !(f >> h.count)) throw schema_error(source, number, "element", "missing vertex count");
    } else if (word == "property") {
      std::string type, name;
      f >> type >> name;
      if (vertex) h.properties.push_back(name);
    } else if (word == "end_header") {
      if (!magic) break;
      return h;
    }
  }
  throw Error(ErrorCode::schema, source + ": missing end_header");
}

}  // namespace detail

inline std::vector<DiffusePoint> read_points_ply(std::istream& in, const std::string& source = "<ply>") {
  const auto header = detail::read_ply_header(in, source);
  const std::vector<std::string> full = {"x", "y", "z", "cam_x", "cam_y", "proj_x", "proj_y", "gap", "quality"};
  const bool rich = header.properties == full;
  const bool bare = header.properties.size() >= 3 && header.properties[0] == "x" && header.properties[1] == "y" &&
                    header.properties[2] == "z";
  if (!rich && !bare) throw Error(ErrorCode::schema, source + ": vertex properties must start with x y z");
  std::vector<DiffusePoint> points;
  points.reserve(header.count);
  std::string line;
  for (std::size_t i = 0; i < header.count; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::schema, source + ": fewer vertices than declared");
    std::istringstream f(line);
    DiffusePoint p;
    const std::size_t row = i + 1;
    for (int k = 0; k < 3; ++k) p.position[k] = detail::parse_field<double>(f, source, row, "xyz");
    if (rich) {
      p.camera_pixel.x = detail::parse_field<int>(f, source, row, "cam_x");
      p.camera_pixel.y = detail::parse_field<int>(f, source, row, "cam_y");
      p.projector_pixel.x() = detail::parse_field<double>(f, source, row, "proj_x");
      p.projector_pixel.y() = detail::parse_field<double>(f, source, row, "proj_y");
      p.gap = detail::parse_field<double>(f, source, row, "gap");
      p.quality = detail::parse_field<double>(f, source, row, "quality");
    }
    points.push_back(p);
  }
  return points;
}

inline void save_points_ply(const std::string& path, const std::vector<DiffusePoint>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  write_points_ply(out, points);
}

inline std::vector<DiffusePoint> load_points_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  return read_points_ply(in, path);
}

}  // namespace evsl
