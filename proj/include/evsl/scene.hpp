#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "evsl/error.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

enum class MaterialKind { diffuse, specular, shiny };

inline std::string_view to_string(MaterialKind kind) {
  switch (kind) {
    case MaterialKind::diffuse: return "diffuse";
    case MaterialKind::specular: return "specular";
    case MaterialKind::shiny: return "shiny";
  }
  return "diffuse";
}

struct Material {
  MaterialKind kind = MaterialKind::diffuse;
  double diffuse_albedo = 1.0;
  double specular_strength = 0.0;

  static Material diffuse(double albedo = 1.0) { return {MaterialKind::diffuse, albedo, 0.0}; }
  static Material specular(double strength = 1.0) { return {MaterialKind::specular, 0.0, strength}; }
  static Material shiny(double albedo, double strength) { return {MaterialKind::shiny, albedo, strength}; }

  bool scatters() const { return diffuse_albedo > 0.0; }
  bool mirrors() const { return specular_strength > 0.0; }

  void validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(diffuse_albedo) || !in_unit(specular_strength))
      throw Error(ErrorCode::invalid_argument, "material: coefficients must lie in [0, 1]");
    switch (kind) {
      case MaterialKind::diffuse:
        if (specular_strength != 0.0 || diffuse_albedo <= 0.0)
          throw Error(ErrorCode::invalid_argument, "material: diffuse needs albedo > 0 and no specular part");
        break;
      case MaterialKind::specular:
        if (diffuse_albedo != 0.0 || specular_strength <= 0.0)
          throw Error(ErrorCode::invalid_argument, "material: specular needs strength > 0 and no albedo");
        break;
      case MaterialKind::shiny:
        if (diffuse_albedo <= 0.0 || specular_strength <= 0.0)
          throw Error(ErrorCode::invalid_argument, "material: shiny needs both albedo and strength > 0");
        break;
    }
  }
};

/// Plane patch through `point`. Non-positive half extents make the plane unbounded
/// along that axis.
struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 u_axis = Vec3::UnitX();
  double half_u = 0.0;
  double half_v = 0.0;

  static Vec3 default_u_axis(const Vec3& normal) {
    const Vec3 helper = std::abs(normal.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
    return helper.cross(normal).normalized();
  }

  Vec3 v_axis() const { return normal.cross(u_axis); }
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Triangle mesh with a median-split bounding volume hierarchy.
class Mesh {
 public:
  Mesh() = default;
  Mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    for (const auto& f : faces_)
      for (int i : f)
        if (i < 0 || i >= static_cast<int>(vertices_.size()))
          throw Error(ErrorCode::invalid_argument, "mesh: face index out of range");
    build();
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& faces() const { return faces_; }

  struct TriangleHit {
    double t;
    int face;
  };

  /// Moller-Trumbore test of one face; returns distance along the ray.
  std::optional<double> intersect_face(const Ray& ray, int face, double t_min) const {
    const auto& f = faces_[face];
    const Vec3& a = vertices_[f[0]];
    const Vec3 e1 = vertices_[f[1]] - a;
    const Vec3 e2 = vertices_[f[2]] - a;
    const Vec3 p = ray.direction.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return std::nullopt;
    const double inv = 1.0 / det;
    const Vec3 s = ray.origin - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return std::nullopt;
    const Vec3 q = s.cross(e1);
    const double v = ray.direction.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return std::nullopt;
    const double t = e2.dot(q) * inv;
    if (t <= t_min) return std::nullopt;
    return t;
  }

  Vec3 face_normal(int face) const {
    const auto& f = faces_[face];
    return (vertices_[f[1]] - vertices_[f[0]]).cross(vertices_[f[2]] - vertices_[f[0]]).normalized();
  }

  std::optional<TriangleHit> intersect(const Ray& ray, double t_min) const {
    if (nodes_.empty()) return std::nullopt;
    std::optional<TriangleHit> best;
    double best_t = std::numeric_limits<double>::infinity();
    const Vec3 inv_dir = ray.direction.cwiseInverse();
    std::array<int, 64> stack{};
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (!slab_hit(node, ray, inv_dir, t_min, best_t)) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) {
          const int face = order_[i];
          if (auto t = intersect_face(ray, face, t_min); t && *t < best_t) {
            best_t = *t;
            best = TriangleHit{*t, face};
          }
        }
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    return best;
  }

 private:
  struct Node {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();
    int left = -1;
    int right = -1;
    int first = 0;
    int count = 0;
  };

  static bool slab_hit(const Node& node, const Ray& ray, const Vec3& inv_dir, double t_min, double t_max) {
    double t0 = t_min;
    double t1 = t_max;
    for (int a = 0; a < 3; ++a) {
      double ta = (node.lo[a] - ray.origin[a]) * inv_dir[a];
      double tb = (node.hi[a] - ray.origin[a]) * inv_dir[a];
      if (ta > tb) std::swap(ta, tb);
      if (std::isnan(ta) || std::isnan(tb)) continue;
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1 * (1.0 + 1e-12) + 1e-12) return false;
    }
    return true;
  }

  void build() {
    nodes_.clear();
    order_.resize(faces_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (faces_.empty()) return;
    centroids_.resize(faces_.size());
    for (size_t i = 0; i < faces_.size(); ++i) {
      const auto& f = faces_[i];
      centroids_[i] = (vertices_[f[0]] + vertices_[f[1]] + vertices_[f[2]]) / 3.0;
    }
    build_node(0, static_cast<int>(faces_.size()), 0);
  }

  int build_node(int first, int count, int depth) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = first; i < first + count; ++i)
      for (int v : faces_[order_[i]]) {
        lo = lo.cwiseMin(vertices_[v]);
        hi = hi.cwiseMax(vertices_[v]);
      }
    const double pad = 1e-9 * std::max(1.0, (hi - lo).norm());
    nodes_[index].lo = lo.array() - pad;
    nodes_[index].hi = hi.array() + pad;
    if (count <= 4 || depth > 40) {
      nodes_[index].first = first;
      nodes_[index].count = count;
      return index;
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](int a, int b) { return centroids_[a][axis] < centroids_[b][axis]; });
    const int left = build_node(first, mid - first, depth + 1);
    const int right = build_node(mid, first + count - mid, depth + 1);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
  }

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
};

using Shape = std::variant<Plane, Sphere, Mesh>;

struct SceneObject {
  Shape shape;
  Material material;
  std::string label;

  void validate() const {
    material.validate();
    if (const auto* s = std::get_if<Sphere>(&shape)) {
      if (!(s->radius > 0.0)) throw Error(ErrorCode::invalid_argument, "sphere '" + label + "': radius must be > 0");
    } else if (const auto* p = std::get_if<Plane>(&shape)) {
      if (std::abs(p->normal.norm() - 1.0) > 1e-9)
        throw Error(ErrorCode::invalid_argument, "plane '" + label + "': normal must have unit length");
      if (std::abs(p->u_axis.norm() - 1.0) > 1e-9 || std::abs(p->u_axis.dot(p->normal)) > 1e-9)
        throw Error(ErrorCode::invalid_argument, "plane '" + label + "': u_axis must be a unit in-plane vector");
    }
  }
};

struct Scene {
  std::vector<SceneObject> objects;

  void validate() const {
    for (const auto& o : objects) o.validate();
  }
};

struct Hit {
  Vec3 point;
  Vec3 normal;  // faces against the incoming ray
  double distance = 0.0;
  int object = -1;
};

inline constexpr double kRayEpsilon = 1e-6;

namespace detail {

inline std::optional<std::pair<double, Vec3>> intersect_shape(const Plane& plane, const Ray& ray, double t_min) {
  const double denom = ray.direction.dot(plane.normal);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (plane.point - ray.origin).dot(plane.normal) / denom;
  if (!(t > t_min)) return std::nullopt;
  const Vec3 rel = ray.at(t) - plane.point;
  if (plane.half_u > 0.0 && std::abs(rel.dot(plane.u_axis)) > plane.half_u) return std::nullopt;
  if (plane.half_v > 0.0 && std::abs(rel.dot(plane.v_axis())) > plane.half_v) return std::nullopt;
  return std::pair{t, plane.normal};
}

inline std::optional<std::pair<double, Vec3>> intersect_shape(const Sphere& sphere, const Ray& ray, double t_min) {
  const Vec3 oc = ray.origin - sphere.center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  // Stable pair of roots.
  const double q = -b - std::copysign(root, b);
  double t0 = q;
  double t1 = q != 0.0 ? c / q : -b;
  if (t0 > t1) std::swap(t0, t1);
  double t = t0 > t_min ? t0 : t1;
  if (!(t > t_min)) return std::nullopt;
  return std::pair{t, Vec3((ray.at(t) - sphere.center) / sphere.radius)};
}

inline std::optional<std::pair<double, Vec3>> intersect_shape(const Mesh& mesh, const Ray& ray, double t_min) {
  auto hit = mesh.intersect(ray, t_min);
  if (!hit) return std::nullopt;
  return std::pair{hit->t, mesh.face_normal(hit->face)};
}

}  // namespace detail

/// Nearest hit with distance > t_min along a unit-direction ray.
inline std::optional<Hit> intersect(const Ray& ray, const Scene& scene, double t_min = kRayEpsilon) {
  std::optional<Hit> best;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    auto found = std::visit([&](const auto& s) { return detail::intersect_shape(s, ray, t_min); },
                            scene.objects[i].shape);
    if (!found) continue;
    if (best && found->first >= best->distance) continue;
    Vec3 n = found->second;
    if (n.dot(ray.direction) > 0.0) n = -n;
    best = Hit{ray.at(found->first), n, found->first, static_cast<int>(i)};
  }
  return best;
}

/// Mirror reflection about a unit normal; origin moves to the hit point.
inline Ray reflect_ray(const Ray& incident, const Vec3& hit_point, const Vec3& normal) {
  const Vec3 d = incident.direction;
  Vec3 out = d - 2.0 * d.dot(normal) * normal;
  return Ray{hit_point, out.normalized()};
}

/// Analytic distance from a point to an object's surface (unbounded for planes).
inline double surface_distance(const SceneObject& object, const Vec3& p) {
  if (const auto* s = std::get_if<Sphere>(&object.shape)) return (p - s->center).norm() - s->radius;
  if (const auto* pl = std::get_if<Plane>(&object.shape)) return (p - pl->point).dot(pl->normal);
  const auto& mesh = std::get<Mesh>(object.shape);
  double best = std::numeric_limits<double>::infinity();
  for (size_t f = 0; f < mesh.faces().size(); ++f) {
    const Vec3 n = mesh.face_normal(static_cast<int>(f));
    const double d = (p - mesh.vertices()[mesh.faces()[f][0]]).dot(n);
    if (std::abs(d) < std::abs(best)) best = d;
  }
  return best;
}

}  // namespace evsl
