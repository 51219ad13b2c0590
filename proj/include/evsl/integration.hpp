#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <queue>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/FFT>

#include "evsl/error.hpp"
#include "evsl/geometry.hpp"

namespace evsl {

using Array2 = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask2 = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Unit normals on a regular camera-pixel grid. Cell (r, c) sits at pixel (x0 + c*pitch, y0 + r*pitch).
struct NormalMap {
  int x0 = 0;
  int y0 = 0;
  double pitch = 1.0;
  int width = 0;
  int height = 0;
  std::vector<Vec3> normals;     // row-major
  std::vector<std::uint8_t> mask;

  NormalMap() = default;
  NormalMap(int w, int h) : width(w), height(h), normals(std::size_t(w) * h, Vec3::Zero()), mask(std::size_t(w) * h, 0) {}

  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  bool valid(int r, int c) const { return mask[index(r, c)] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
  }
};

/// Per-cell depth over the same grid layout as a NormalMap.
struct SurfaceEstimate {
  int x0 = 0;
  int y0 = 0;
  double pitch = 1.0;
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> mask;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;  // max |delta depth| per iteration, mm

  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  bool valid(int r, int c) const { return mask[index(r, c)] != 0; }
};

namespace detail {

inline void fft_rows(Eigen::Array<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
                     bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(a.cols()), out(a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) in[c] = a(r, c);
    if (inverse)
      fft.inv(out, in);
    else
      fft.fwd(out, in);
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = out[c];
  }
}

using ComplexGrid = Eigen::Array<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline ComplexGrid fft2(const ComplexGrid& in, bool inverse) {
  ComplexGrid a = in;
  fft_rows(a, inverse);
  ComplexGrid t = a.transpose();
  fft_rows(t, inverse);
  return t.transpose();
}

}  // namespace detail

/// Frankot-Chellappa integration of gradients p = dz/dx, q = dz/dy on a full grid (unit pitch).
/// Uses the trapezoid-consistent difference operator on the mirror-symmetric extension, which
/// is exact for planar and quadratic fields. Result has zero mean.
inline Array2 frankot_chellappa(const Array2& p, const Array2& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols() || p.size() == 0)
    throw Error(ErrorCode::invalid_argument, "frankot_chellappa: gradient grids must be non-empty and equal");
  const Eigen::Index h = p.rows(), w = p.cols();
  detail::ComplexGrid pe(2 * h, 2 * w), qe(2 * h, 2 * w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) {
      const Eigen::Index rf = 2 * h - 1 - r, cf = 2 * w - 1 - c;
      pe(r, c) = p(r, c);
      pe(r, cf) = -p(r, c);
      pe(rf, c) = p(r, c);
      pe(rf, cf) = -p(r, c);
      qe(r, c) = q(r, c);
      qe(r, cf) = q(r, c);
      qe(rf, c) = -q(r, c);
      qe(rf, cf) = -q(r, c);
    }
  const detail::ComplexGrid pf = detail::fft2(pe, false);
  const detail::ComplexGrid qf = detail::fft2(qe, false);
  detail::ComplexGrid zf(2 * h, 2 * w);
  const std::complex<double> i1(0.0, 1.0);
  for (Eigen::Index r = 0; r < 2 * h; ++r)
    for (Eigen::Index c = 0; c < 2 * w; ++c) {
      if (r == 0 && c == 0) {
        zf(r, c) = 0.0;
        continue;
      }
      const double wx = 2.0 * M_PI * c / (2.0 * w);
      const double wy = 2.0 * M_PI * r / (2.0 * h);
      const std::complex<double> ex = std::exp(i1 * wx), ey = std::exp(i1 * wy);
      const std::complex<double> dx = ex - 1.0, dy = ey - 1.0;
      const std::complex<double> ax = 0.5 * (1.0 + ex), ay = 0.5 * (1.0 + ey);
      const double den = std::norm(dx) + std::norm(dy);
      zf(r, c) = (std::conj(dx) * ax * pf(r, c) + std::conj(dy) * ay * qf(r, c)) / den;
    }
  const detail::ComplexGrid z = detail::fft2(zf, true);
  Array2 out(h, w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) out(r, c) = z(r, c).real();
  return out - out.mean();
}

/// Discrete curl dp/dy - dq/dx over fully valid 2x2 cells, as an RMS value.
inline double integrability_curl(const Array2& p, const Array2& q, const Mask2& mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index r = 0; r + 1 < p.rows(); ++r)
    for (Eigen::Index c = 0; c + 1 < p.cols(); ++c) {
      if (!(mask(r, c) && mask(r + 1, c) && mask(r, c + 1) && mask(r + 1, c + 1))) continue;
      const double dpdy = 0.5 * (p(r + 1, c) + p(r + 1, c + 1) - p(r, c) - p(r, c + 1));
      const double dqdx = 0.5 * (q(r, c + 1) + q(r + 1, c + 1) - q(r, c) - q(r + 1, c));
      sum += (dpdy - dqdx) * (dpdy - dqdx);
      ++n;
    }
  return n == 0 ? 0.0 : std::sqrt(sum / n);
}

/// Orthographic Frankot-Chellappa on a normal map: p = -n_x/n_z, q = -n_y/n_z. Cells with
/// |n_z| <= eps are masked; masked cells are padded with zero gradients and re-masked. The
/// additive constant is chosen so the masked mean is zero; heights are scaled by the pitch.
inline SurfaceEstimate integrate_frankot_chellappa(const NormalMap& normals, double eps = 1e-3) {
  if (normals.width <= 0 || normals.height <= 0 || normals.count() == 0)
    throw Error(ErrorCode::empty_mask, "integrate_frankot_chellappa: empty mask");
  Array2 p = Array2::Zero(normals.height, normals.width);
  Array2 q = Array2::Zero(normals.height, normals.width);
  SurfaceEstimate out;
  out.x0 = normals.x0;
  out.y0 = normals.y0;
  out.pitch = normals.pitch;
  out.width = normals.width;
  out.height = normals.height;
  out.mask.assign(normals.mask.size(), 0);
  std::size_t valid = 0;
  for (int r = 0; r < normals.height; ++r)
    for (int c = 0; c < normals.width; ++c) {
      if (!normals.valid(r, c)) continue;
      const Vec3& n = normals.normals[normals.index(r, c)];
      if (std::abs(n.z()) <= eps) continue;
      p(r, c) = -n.x() / n.z();
      q(r, c) = -n.y() / n.z();
      out.mask[normals.index(r, c)] = 1;
      ++valid;
    }
  if (valid == 0) throw Error(ErrorCode::empty_mask, "integrate_frankot_chellappa: no cell with |n_z| > eps");
  const Array2 z = frankot_chellappa(p, q) * normals.pitch;
  double mean = 0.0;
  for (int r = 0; r < normals.height; ++r)
    for (int c = 0; c < normals.width; ++c)
      if (out.mask[out.index(r, c)]) mean += z(r, c);
  mean /= static_cast<double>(valid);
  out.depth.assign(out.mask.size(), 0.0);
  for (int r = 0; r < normals.height; ++r)
    for (int c = 0; c < normals.width; ++c)
      if (out.mask[out.index(r, c)]) out.depth[out.index(r, c)] = z(r, c) - mean;
  out.iterations = 1;
  out.converged = true;
  return out;
}

/// Least-squares integration restricted to a mask: unknown heights on valid cells, one
/// trapezoid equation per edge between valid neighbours. The factorization depends only on
/// the mask, so repeated solves are cheap. Each 4-connected component is pinned at its
/// first cell; anchor afterwards with `components()`.
class MaskedIntegrator {
 public:
  explicit MaskedIntegrator(const Mask2& mask) : mask_(mask) {
    const Eigen::Index h = mask.rows(), w = mask.cols();
    index_.assign(std::size_t(h * w), -1);
    int n = 0;
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < w; ++c)
        if (mask(r, c)) index_[std::size_t(r * w + c)] = n++;
    if (n == 0) throw Error(ErrorCode::empty_mask, "MaskedIntegrator: empty mask");
    unknowns_ = n;
    label_components();

    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> diag(n, 0.0);
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < w; ++c) {
        const int a = at(r, c);
        if (a < 0) continue;
        if (c + 1 < w && at(r, c + 1) >= 0) {
          add_edge(a, at(r, c + 1), trip, diag);
          edges_.push_back({r, c, 0});
        }
        if (r + 1 < h && at(r + 1, c) >= 0) {
          add_edge(a, at(r + 1, c), trip, diag);
          edges_.push_back({r, c, 1});
        }
      }
    for (int first : component_first_) diag[first] += 1.0;
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, diag[i]);
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    solver_.compute(a);
    if (solver_.info() != Eigen::Success)
      throw Error(ErrorCode::degenerate_geometry, "MaskedIntegrator: factorization failed");
  }

  /// Heights (zero outside the mask) for gradients p = dz/dx, q = dz/dy at unit pitch.
  Array2 solve(const Array2& p, const Array2& q) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns_);
    for (const auto& e : edges_) {
      const int a = at(e.r, e.c);
      const int b = e.dir == 0 ? at(e.r, e.c + 1) : at(e.r + 1, e.c);
      const double g = e.dir == 0 ? 0.5 * (p(e.r, e.c) + p(e.r, e.c + 1)) : 0.5 * (q(e.r, e.c) + q(e.r + 1, e.c));
      rhs[b] += g;
      rhs[a] -= g;
    }
    const Eigen::VectorXd x = solver_.solve(rhs);
    Array2 z = Array2::Zero(mask_.rows(), mask_.cols());
    for (Eigen::Index r = 0; r < mask_.rows(); ++r)
      for (Eigen::Index c = 0; c < mask_.cols(); ++c)
        if (const int i = at(r, c); i >= 0) z(r, c) = x[i];
    return z;
  }

  /// Per-cell mean absolute edge misfit and the RMS misfit over all edges.
  std::pair<Array2, double> edge_residuals(const Array2& z, const Array2& p, const Array2& q) const {
    Array2 cell = Array2::Zero(mask_.rows(), mask_.cols());
    Array2 count = Array2::Zero(mask_.rows(), mask_.cols());
    double sum = 0.0;
    for (const auto& e : edges_) {
      const Eigen::Index r2 = e.dir == 0 ? e.r : e.r + 1, c2 = e.dir == 0 ? e.c + 1 : e.c;
      const double g = e.dir == 0 ? 0.5 * (p(e.r, e.c) + p(r2, c2)) : 0.5 * (q(e.r, e.c) + q(r2, c2));
      const double m = z(r2, c2) - z(e.r, e.c) - g;
      sum += m * m;
      cell(e.r, e.c) += std::abs(m);
      cell(r2, c2) += std::abs(m);
      count(e.r, e.c) += 1.0;
      count(r2, c2) += 1.0;
    }
    for (Eigen::Index i = 0; i < cell.size(); ++i)
      if (count(i) > 0.0) cell(i) /= count(i);
    return {cell, edges_.empty() ? 0.0 : std::sqrt(sum / edges_.size())};
  }

  const Mask2& mask() const { return mask_; }
  /// Component label per cell (-1 outside the mask).
  const std::vector<int>& components() const { return component_; }
  int component_count() const { return static_cast<int>(component_first_.size()); }
  std::size_t edge_count() const { return edges_.size(); }

 private:
  struct Edge {
    Eigen::Index r, c;
    int dir;  // 0 = right neighbour, 1 = lower neighbour
  };

  int at(Eigen::Index r, Eigen::Index c) const { return index_[std::size_t(r * mask_.cols() + c)]; }

  static void add_edge(int a, int b, std::vector<Eigen::Triplet<double>>& trip, std::vector<double>& diag) {
    diag[a] += 1.0;
    diag[b] += 1.0;
    trip.emplace_back(a, b, -1.0);
    trip.emplace_back(b, a, -1.0);
  }

  void label_components() {
    const Eigen::Index h = mask_.rows(), w = mask_.cols();
    component_.assign(std::size_t(h * w), -1);
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < w; ++c) {
        if (at(r, c) < 0 || component_[std::size_t(r * w + c)] >= 0) continue;
        const int label = static_cast<int>(component_first_.size());
        component_first_.push_back(at(r, c));
        std::queue<std::pair<Eigen::Index, Eigen::Index>> todo;
        todo.push({r, c});
        component_[std::size_t(r * w + c)] = label;
        while (!todo.empty()) {
          const auto [cr, cc] = todo.front();
          todo.pop();
          const Eigen::Index nr[4] = {cr - 1, cr + 1, cr, cr}, nc[4] = {cc, cc, cc - 1, cc + 1};
          for (int k = 0; k < 4; ++k) {
            if (nr[k] < 0 || nc[k] < 0 || nr[k] >= h || nc[k] >= w) continue;
            const std::size_t idx = std::size_t(nr[k] * w + nc[k]);
            if (at(nr[k], nc[k]) < 0 || component_[idx] >= 0) continue;
            component_[idx] = label;
            todo.push({nr[k], nc[k]});
          }
        }
      }
  }

  Mask2 mask_;
  std::vector<int> index_;
  int unknowns_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> component_;
  std::vector<int> component_first_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

}  // namespace evsl
