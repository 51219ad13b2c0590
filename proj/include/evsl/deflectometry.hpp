#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evsl/error.hpp"
#include "evsl/geometry.hpp"
#include "evsl/integration.hpp"
#include "evsl/separation.hpp"
#include "evsl/triangulation.hpp"

namespace evsl {

struct DeflectometryCorrespondence {
  PixelIndex camera_pixel;
  Vec3 screen_point = Vec3::Zero();
  double quality = 1.0;
  Vec2 projector_pixel = Vec2::Zero();
};

struct ScreenBinding {
  std::vector<DeflectometryCorrespondence> bound;
  std::size_t uncovered = 0;

  double coverage() const {
    const std::size_t total = bound.size() + uncovered;
    return total == 0 ? 0.0 : static_cast<double>(bound.size()) / total;
  }
};

/// Binds indirect correspondences to the screen point lit by their projector pixel.
inline ScreenBinding bind_screen(const std::vector<ClassifiedCorrespondence>& classified,
                                 const VirtualScreen& screen) {
  ScreenBinding out;
  for (const auto& c : classified) {
    if (c.cls != CorrespondenceClass::indirect) continue;
    if (auto p = screen.lookup(c.base.projector)) {
      out.bound.push_back({c.base.camera, *p, c.base.quality, c.base.projector});
    } else {
      ++out.uncovered;
    }
  }
  return out;
}

/// Mirror-law normal at the camera ray point `depth` mm from the centre, reflecting `screen_point`.
inline Vec3 normal_from_depth(const PinholeModel& camera, const Vec2& pixel, double depth, const Vec3& screen_point) {
  if (!(depth > 0.0)) throw Error(ErrorCode::invalid_argument, "normal_from_depth: depth must be > 0");
  const Ray ray = pixel_to_ray(camera, pixel);
  const Vec3 s_pt = ray.at(depth);
  const Vec3 to_screen = screen_point - s_pt;
  if (to_screen.norm() <= 1e-12)
    throw Error(ErrorCode::invalid_argument, "normal_from_depth: screen point coincides with surface point");
  const Vec3 v = (ray.origin - s_pt).normalized();
  const Vec3 sum = v + to_screen.normalized();
  if (sum.norm() <= 1e-9) throw Error(ErrorCode::degenerate_normal, "normal_from_depth: grazing configuration");
  return sum.normalized();
}

enum class Integrator { least_squares, frankot_chellappa };

inline std::string_view to_string(Integrator i) {
  return i == Integrator::least_squares ? "least_squares" : "frankot_chellappa";
}

inline Integrator integrator_from_string(const std::string& s) {
  if (s == "least_squares") return Integrator::least_squares;
  if (s == "frankot_chellappa") return Integrator::frankot_chellappa;
  throw Error(ErrorCode::invalid_argument, "unknown integrator '" + s + "'");
}

struct DeflectometryOptions {
  double init_depth = 0.0;  // mm along the camera ray; 0 = derive from the diffuse scene
  int max_iter = 50;
  double tol_mm = 0.01;
  Integrator integrator = Integrator::least_squares;
  bool resolve_scale = true;  // search the depth anchor that makes the normal field integrable
  double scale_min = 0.5;
  double scale_max = 1.5;
  int scale_samples = 21;
  int scale_refinements = 30;
  double outlier_sigma = 6.0;
  double min_facing = 0.2;  // cos of the view angle below which cells are masked
  double boundary_px = 20.0;

  void validate() const {
    if (!(init_depth >= 0.0)) throw Error(ErrorCode::invalid_argument, "deflectometry: init_depth must be >= 0");
    if (max_iter < 1) throw Error(ErrorCode::invalid_argument, "deflectometry: max_iter must be >= 1");
    if (!(tol_mm > 0.0)) throw Error(ErrorCode::invalid_argument, "deflectometry: tol_mm must be > 0");
    if (!(scale_min > 0.0 && scale_max > scale_min) || scale_samples < 3)
      throw Error(ErrorCode::invalid_argument, "deflectometry: invalid scale search range");
    if (!(outlier_sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "deflectometry: outlier_sigma must be > 0");
  }
};

struct DeflectometryResult {
  SurfaceEstimate surface;
  NormalMap normals;
  double init_depth = 0.0;
  double anchor_scale = 1.0;
  double integrability_rms = 0.0;
  std::size_t cells = 0;
  std::size_t rejected_cells = 0;
  std::size_t facing_masked = 0;

  double rejected_fraction() const { return cells == 0 ? 0.0 : static_cast<double>(rejected_cells) / cells; }
};

/// Scattered correspondences rasterized to a 1 px grid; screen points averaged by quality.
struct DeflectometryGrid {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  std::vector<Vec3> screen;
  Mask2 mask;

  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
};

inline DeflectometryGrid rasterize(const std::vector<DeflectometryCorrespondence>& items) {
  DeflectometryGrid g;
  if (items.empty()) return g;
  int x1 = items.front().camera_pixel.x, y1 = items.front().camera_pixel.y;
  g.x0 = x1;
  g.y0 = y1;
  for (const auto& c : items) {
    g.x0 = std::min(g.x0, c.camera_pixel.x);
    g.y0 = std::min(g.y0, c.camera_pixel.y);
    x1 = std::max(x1, c.camera_pixel.x);
    y1 = std::max(y1, c.camera_pixel.y);
  }
  g.width = x1 - g.x0 + 1;
  g.height = y1 - g.y0 + 1;
  g.screen.assign(std::size_t(g.width) * g.height, Vec3::Zero());
  std::vector<double> weight(g.screen.size(), 0.0);
  for (const auto& c : items) {
    const std::size_t i = g.index(c.camera_pixel.y - g.y0, c.camera_pixel.x - g.x0);
    const double w = std::max(c.quality, 1e-12);
    g.screen[i] += w * c.screen_point;
    weight[i] += w;
  }
  g.mask = Mask2::Constant(g.height, g.width, false);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      const std::size_t i = g.index(r, c);
      if (weight[i] > 0.0) {
        g.screen[i] /= weight[i];
        g.mask(r, c) = true;
      }
    }
  return g;
}

/// Median ray distance of diffuse points within `band_px` of the specular region (outside it);
/// falls back to the median over all diffuse points.
inline double default_init_depth(const std::vector<DiffusePoint>& diffuse, const PinholeModel& camera,
                                 const std::vector<DeflectometryCorrespondence>& specular, double band_px = 20.0) {
  if (diffuse.empty())
    throw Error(ErrorCode::invalid_argument, "default_init_depth: no diffuse points to derive a depth from");
  const Vec3 c = camera.center();
  auto median = [](std::vector<double> v) {
    const std::size_t mid = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };
  std::vector<double> all;
  all.reserve(diffuse.size());
  for (const auto& p : diffuse) all.push_back((p.position - c).norm());
  if (specular.empty()) return median(all);

  const DeflectometryGrid g = rasterize(specular);
  std::vector<PixelIndex> boundary;
  for (int r = 0; r < g.height; ++r)
    for (int col = 0; col < g.width; ++col) {
      if (!g.mask(r, col)) continue;
      const bool edge = r == 0 || col == 0 || r + 1 == g.height || col + 1 == g.width || !g.mask(r - 1, col) ||
                        !g.mask(r + 1, col) || !g.mask(r, col - 1) || !g.mask(r, col + 1);
      if (edge) boundary.push_back({g.x0 + col, g.y0 + r});
    }
  std::vector<double> band;
  const double band2 = band_px * band_px;
  for (std::size_t i = 0; i < diffuse.size(); ++i) {
    const PixelIndex& px = diffuse[i].camera_pixel;
    if (px.x < g.x0 - band_px || px.x > g.x0 + g.width + band_px || px.y < g.y0 - band_px ||
        px.y > g.y0 + g.height + band_px)
      continue;
    const int r = px.y - g.y0, col = px.x - g.x0;
    if (r >= 0 && col >= 0 && r < g.height && col < g.width && g.mask(r, col)) continue;
    for (const auto& b : boundary) {
      const double dx = px.x - b.x, dy = px.y - b.y;
      if (dx * dx + dy * dy <= band2) {
        band.push_back(all[i]);
        break;
      }
    }
  }
  return band.empty() ? median(all) : median(band);
}

namespace detail {

/// Golden-section minimum of `f` on [lo, hi]; returns (argmin, value).
template <class F>
std::pair<double, double> golden_section(F&& f, double lo, double hi, int iterations) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
  double fa = f(a), fb = f(b);
  for (int k = 0; k < iterations; ++k) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - phi * (hi - lo);
      fa = f(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + phi * (hi - lo);
      fb = f(b);
    }
  }
  return fa < fb ? std::pair{a, fa} : std::pair{b, fb};
}

/// Alternating shape/normal refinement at a fixed depth anchor, on log ray distance.
class ShapeSolver {
 public:
  ShapeSolver(const DeflectometryGrid& grid, const PinholeModel& camera, const DeflectometryOptions& options)
      : grid_(grid), camera_(camera), options_(options) {
    const std::size_t n = grid.screen.size();
    origin_ = camera.center();
    dir_.resize(n);
    du_.resize(n);
    dv_.resize(n);
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c) {
        const std::size_t i = grid.index(r, c);
        const double x = grid.x0 + c, y = grid.y0 + r;
        dir_[i] = pixel_to_ray(camera, Vec2(x, y)).direction;
        du_[i] = pixel_to_ray(camera, Vec2(x + 0.5, y)).direction - pixel_to_ray(camera, Vec2(x - 0.5, y)).direction;
        dv_[i] = pixel_to_ray(camera, Vec2(x, y + 0.5)).direction - pixel_to_ray(camera, Vec2(x, y - 0.5)).direction;
      }
    set_mask(grid.mask);
  }

  void set_mask(const Mask2& mask) {
    mask_ = mask;
    integrator_ = std::make_unique<MaskedIntegrator>(mask_);
  }

  const Mask2& mask() const { return mask_; }
  const MaskedIntegrator& integrator() const { return *integrator_; }

  Vec3 normal_at(std::size_t i, double r) const {
    const Vec3 s = origin_ + r * dir_[i];
    const Vec3 v = (origin_ - s).normalized();
    const Vec3 t = (grid_.screen[i] - s).normalized();
    const Vec3 sum = v + t;
    const double len = sum.norm();
    return len <= 1e-9 ? Vec3(-dir_[i]) : Vec3(sum / len);
  }

  double facing(std::size_t i, double r) const { return -normal_at(i, r).dot(dir_[i]); }

  /// Gradients of ln(distance) implied by the mirror-law normals at distances `depth`.
  void gradients(const Array2& depth, Array2& p, Array2& q) const {
    p = Array2::Zero(grid_.height, grid_.width);
    q = Array2::Zero(grid_.height, grid_.width);
    for (int r = 0; r < grid_.height; ++r)
      for (int c = 0; c < grid_.width; ++c) {
        if (!mask_(r, c)) continue;
        const std::size_t i = grid_.index(r, c);
        const Vec3 n = normal_at(i, depth(r, c));
        const double nd = n.dot(dir_[i]);
        if (std::abs(nd) < 1e-9) continue;
        p(r, c) = -n.dot(du_[i]) / nd;
        q(r, c) = -n.dot(dv_[i]) / nd;
      }
  }

  Array2 integrate(const Array2& p, const Array2& q) const {
    if (options_.integrator == Integrator::least_squares) return integrator_->solve(p, q);
    Array2 pm = Array2::Zero(p.rows(), p.cols()), qm = pm;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (mask_(i)) {
        pm(i) = p(i);
        qm(i) = q(i);
      }
    return frankot_chellappa(pm, qm);
  }

  struct Run {
    Array2 depth;
    std::vector<double> history;
    bool converged = false;
    bool diverged = false;
    double integrability = std::numeric_limits<double>::infinity();
    double median_cell = std::numeric_limits<double>::infinity();  // median per-cell misfit
    double median_gradient = 0.0;                                    // median |(p, q)|

    /// Scale-free integrability score: misfit relative to the slope it is measured against.
    double relative_misfit() const {
      return median_gradient > 0.0 ? median_cell / median_gradient : std::numeric_limits<double>::infinity();
    }
  };

  /// Iterates from `start`, holding each component's mean depth at its value in `start`.
  Run run(const Array2& start) const { return run(start, options_.tol_mm, options_.max_iter); }

  Run run(const Array2& start, double tol_mm, int max_iter) const {
    Run out;
    out.depth = start;
    const auto& comp = integrator_->components();
    const int nc = integrator_->component_count();
    std::vector<double> target(nc, 0.0), count(nc, 0.0);
    for (Eigen::Index i = 0; i < start.size(); ++i)
      if (comp[i] >= 0) {
        target[comp[i]] += start(i);
        count[comp[i]] += 1.0;
      }
    for (int k = 0; k < nc; ++k) target[k] /= count[k];

    Array2 p, q;
    for (int it = 0; it < max_iter; ++it) {
      gradients(out.depth, p, q);
      const Array2 g = integrate(p, q);
      Array2 next = out.depth;
      std::vector<double> mean(nc, 0.0);
      for (Eigen::Index i = 0; i < g.size(); ++i)
        if (comp[i] >= 0) {
          next(i) = std::exp(g(i));
          mean[comp[i]] += next(i);
        }
      double delta = 0.0;
      bool finite = true;
      for (Eigen::Index i = 0; i < g.size(); ++i)
        if (comp[i] >= 0) {
          next(i) *= target[comp[i]] * count[comp[i]] / mean[comp[i]];
          if (!std::isfinite(next(i)) || next(i) <= 0.0) finite = false;
          delta = std::max(delta, std::abs(next(i) - out.depth(i)));
        }
      if (!finite) {
        out.diverged = true;
        return out;
      }
      out.depth = next;
      out.history.push_back(delta);
      if (delta < tol_mm) {
        out.converged = true;
        break;
      }
    }
    gradients(out.depth, p, q);
    Array2 logd = Array2::Zero(out.depth.rows(), out.depth.cols());
    for (Eigen::Index i = 0; i < logd.size(); ++i)
      if (mask_(i)) logd(i) = std::log(out.depth(i));
    const auto [cells, rms] = integrator_->edge_residuals(logd, p, q);
    out.integrability = rms;
    std::vector<double> v, g;
    for (Eigen::Index i = 0; i < cells.size(); ++i)
      if (mask_(i)) {
        v.push_back(cells(i));
        g.push_back(std::hypot(p(i), q(i)));
      }
    if (!v.empty()) {
      const std::size_t mid = v.size() / 2;
      std::nth_element(v.begin(), v.begin() + mid, v.end());
      std::nth_element(g.begin(), g.begin() + mid, g.end());
      out.median_cell = v[mid];
      out.median_gradient = g[mid];
    }
    return out;
  }

  Array2 cell_residuals(const Array2& depth) const {
    Array2 p, q;
    gradients(depth, p, q);
    Array2 logd = Array2::Zero(depth.rows(), depth.cols());
    for (Eigen::Index i = 0; i < logd.size(); ++i)
      if (mask_(i)) logd(i) = std::log(depth(i));
    return integrator_->edge_residuals(logd, p, q).first;
  }

  const Vec3& direction(std::size_t i) const { return dir_[i]; }

 private:
  const DeflectometryGrid& grid_;
  const PinholeModel& camera_;
  const DeflectometryOptions& options_;
  Vec3 origin_;
  std::vector<Vec3> dir_, du_, dv_;
  Mask2 mask_;
  std::unique_ptr<MaskedIntegrator> integrator_;
};

}  // namespace detail

/// Recovers a specular surface from screen-bound correspondences by alternating mirror-law
/// normals and normal integration; see DeflectometryOptions for the knobs.
inline DeflectometryResult iterative_shape(const std::vector<DeflectometryCorrespondence>& correspondences,
                                           const PinholeModel& camera, const DeflectometryOptions& options) {
  options.validate();
  if (correspondences.empty()) throw Error(ErrorCode::empty_mask, "iterative_shape: no bound correspondences");
  if (!(options.init_depth > 0.0)) throw Error(ErrorCode::invalid_argument, "iterative_shape: init_depth must be > 0");

  DeflectometryGrid grid = rasterize(correspondences);
  DeflectometryResult result;
  result.init_depth = options.init_depth;

  detail::ShapeSolver solver(grid, camera, options);
  const auto flat = [&](double depth) { return Array2::Constant(grid.height, grid.width, depth); };

  // Grazing cells are masked once, judged at the anchor depth.
  auto mask_grazing = [&](const Array2& depth) {
    Mask2 keep = solver.mask();
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c)
        if (keep(r, c) && solver.facing(grid.index(r, c), depth(r, c)) < options.min_facing) {
          keep(r, c) = false;
          ++result.facing_masked;
        }
    if (!keep.any()) throw Error(ErrorCode::empty_mask, "iterative_shape: every cell is grazing");
    if (result.facing_masked > 0) solver.set_mask(keep);
  };

  double scale = 1.0;
  if (options.resolve_scale && solver.integrator().edge_count() > 0) {
    // Candidate anchors are scored on tightly converged runs by the median per-cell misfit
    // relative to the median slope; medians keep grazing rim cells from dominating.
    const double score_tol = std::min(options.tol_mm, 1e-7 * options.init_depth);
    const int score_iter = std::max(options.max_iter, 200);
    const auto score = [&](double s) {
      const auto run = solver.run(flat(s * options.init_depth), score_tol, score_iter);
      return run.diverged ? std::numeric_limits<double>::infinity() : run.relative_misfit();
    };
    const int n = options.scale_samples;
    std::vector<double> xs(n), fs(n);
    int best = 0;
    for (int i = 0; i < n; ++i) {
      xs[i] = options.scale_min + (options.scale_max - options.scale_min) * i / (n - 1);
      fs[i] = score(xs[i]);
      if (fs[i] < fs[best]) best = i;
    }
    // The coarse pick fixes the grazing mask; the refinement then scores the masked cells only.
    const double step = (options.scale_max - options.scale_min) / (n - 1);
    double lo = std::max(options.scale_min, xs[best] - step), hi = std::min(options.scale_max, xs[best] + step);
    double coarse = xs[best];
    {
      auto f = detail::golden_section(score, lo, hi, options.scale_refinements);
      if (f.second < fs[best]) coarse = f.first;
    }
    mask_grazing(solver.run(flat(coarse * options.init_depth), score_tol, score_iter).depth);
    lo = std::max(options.scale_min, coarse - step);
    hi = std::min(options.scale_max, coarse + step);
    const auto fine = detail::golden_section(score, lo, hi, options.scale_refinements);
    scale = fine.first;
    if (score(coarse) < fine.second) scale = coarse;
  } else {
    mask_grazing(flat(options.init_depth));
  }
  result.anchor_scale = scale;

  auto run = solver.run(flat(scale * options.init_depth));
  if (run.diverged) throw Error(ErrorCode::degenerate_geometry, "iterative_shape: iteration diverged");
  std::vector<double> history = run.history;
  int iterations = static_cast<int>(run.history.size());
  bool converged = run.converged;

  const std::size_t cells = static_cast<std::size_t>(solver.mask().count());
  result.cells = cells;
  if (cells > 1) {
    const Array2 res = solver.cell_residuals(run.depth);
    double mean = 0.0, sq = 0.0;
    for (Eigen::Index i = 0; i < res.size(); ++i)
      if (solver.mask()(i)) mean += res(i);
    mean /= cells;
    for (Eigen::Index i = 0; i < res.size(); ++i)
      if (solver.mask()(i)) sq += (res(i) - mean) * (res(i) - mean);
    const double sigma = std::sqrt(sq / cells);
    Mask2 keep = solver.mask();
    for (Eigen::Index i = 0; i < res.size(); ++i)
      if (keep(i) && std::abs(res(i) - mean) > options.outlier_sigma * sigma) {
        keep(i) = false;
        ++result.rejected_cells;
      }
    if (result.rejected_cells > 0 && keep.any()) {
      solver.set_mask(keep);
      run = solver.run(run.depth);
      if (run.diverged) throw Error(ErrorCode::degenerate_geometry, "iterative_shape: re-integration diverged");
      history.insert(history.end(), run.history.begin(), run.history.end());
      iterations += static_cast<int>(run.history.size());
      converged = run.converged;
    }
  }
  result.integrability_rms = run.integrability;

  SurfaceEstimate& s = result.surface;
  s.x0 = grid.x0;
  s.y0 = grid.y0;
  s.width = grid.width;
  s.height = grid.height;
  s.depth.assign(grid.screen.size(), 0.0);
  s.mask.assign(grid.screen.size(), 0);
  s.iterations = iterations;
  s.converged = converged;
  s.residual_history = history;
  NormalMap& nm = result.normals;
  nm = NormalMap(grid.width, grid.height);
  nm.x0 = grid.x0;
  nm.y0 = grid.y0;
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) {
      if (!solver.mask()(r, c)) continue;
      const std::size_t i = grid.index(r, c);
      s.depth[i] = run.depth(r, c);
      s.mask[i] = 1;
      nm.normals[i] = solver.normal_at(i, run.depth(r, c));
      nm.mask[i] = 1;
    }
  return result;
}

/// 3D surface points (camera centre + depth along each cell's ray).
inline std::vector<DiffusePoint> surface_points(const SurfaceEstimate& surface, const PinholeModel& camera) {
  std::vector<DiffusePoint> out;
  for (int r = 0; r < surface.height; ++r)
    for (int c = 0; c < surface.width; ++c) {
      if (!surface.valid(r, c)) continue;
      const PixelIndex px{surface.x0 + c, surface.y0 + r};
      const Ray ray = pixel_to_ray(camera, Vec2(px.x, px.y));
      DiffusePoint p;
      p.position = ray.at(surface.depth[surface.index(r, c)]);
      p.camera_pixel = px;
      p.projector_pixel = Vec2(-1.0, -1.0);
      out.push_back(p);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Exports

/// 3-channel little-endian PFM (scale -1), rows written bottom to top.
inline void write_normals_pfm(std::ostream& out, const NormalMap& normals) {
  out << "PF\n" << normals.width << ' ' << normals.height << "\n-1.0\n";
  for (int r = normals.height - 1; r >= 0; --r)
    for (int c = 0; c < normals.width; ++c) {
      const Vec3& n = normals.normals[normals.index(r, c)];
      for (int k = 0; k < 3; ++k) {
        const float v = normals.valid(r, c) ? static_cast<float>(n[k]) : 0.0f;
        unsigned char b[4];
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int j = 0; j < 4; ++j) b[j] = static_cast<unsigned char>(bits >> (8 * j));
        out.write(reinterpret_cast<const char*>(b), 4);
      }
    }
}

inline NormalMap read_normals_pfm(std::istream& in, const std::string& source = "<pfm>") {
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  if (!(in >> magic >> w >> h >> scale) || magic != "PF" || w <= 0 || h <= 0)
    throw Error(ErrorCode::schema, source + ": not a 3-channel PFM");
  if (scale >= 0.0) throw Error(ErrorCode::schema, source + ": only little-endian PFM is supported");
  in.get();
  NormalMap nm(w, h);
  for (int r = h - 1; r >= 0; --r)
    for (int c = 0; c < w; ++c) {
      Vec3 n;
      for (int k = 0; k < 3; ++k) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::schema, source + ": truncated PFM");
        std::uint32_t bits = 0;
        for (int j = 0; j < 4; ++j) bits |= static_cast<std::uint32_t>(b[j]) << (8 * j);
        float v;
        std::memcpy(&v, &bits, 4);
        n[k] = v;
      }
      nm.normals[nm.index(r, c)] = n;
      nm.mask[nm.index(r, c)] = n.squaredNorm() > 0.0;
    }
  return nm;
}

/// Binary PGM, 255 for valid cells.
inline void write_mask_pgm(std::ostream& out, const NormalMap& normals) {
  out << "P5\n" << normals.width << ' ' << normals.height << "\n255\n";
  for (auto m : normals.mask) out.put(static_cast<char>(m ? 255 : 0));
}

inline void write_residual_history(std::ostream& out, const SurfaceEstimate& surface) {
  out << "# iteration max_delta_mm\n";
  char buf[64];
  for (std::size_t i = 0; i < surface.residual_history.size(); ++i) {
    const int n = std::snprintf(buf, sizeof buf, "%zu %.17g\n", i + 1, surface.residual_history[i]);
    out.write(buf, n);
  }
}

}  // namespace evsl
