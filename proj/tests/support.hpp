#pragma once

// Test-only oracles and generators. Nothing here calls into the code paths
// these helpers are used to check.

#include "bodyvox/voxcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace testsupport {

using bodyvox::Vec3;
using bodyvox::voxcore::TriMesh;

// Ray-parity point membership: casts +x rays and counts triangle crossings.
// Triangles are bucketed by their yz footprint.
class PointInMesh {
 public:
  explicit PointInMesh(const TriMesh& mesh, int buckets = 64) : mesh_(mesh), n_(buckets) {
    lo_ = Vec3::Constant(1e300);
    hi_ = Vec3::Constant(-1e300);
    for (const auto& v : mesh.vertices) {
      lo_ = lo_.cwiseMin(v);
      hi_ = hi_.cwiseMax(v);
    }
    cells_.resize(std::size_t(n_ * n_));
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      Vec3 a = mesh.vertices[mesh.faces[f][0]];
      Vec3 b = mesh.vertices[mesh.faces[f][1]];
      Vec3 c = mesh.vertices[mesh.faces[f][2]];
      const Vec3 flo = a.cwiseMin(b).cwiseMin(c);
      const Vec3 fhi = a.cwiseMax(b).cwiseMax(c);
      for (int j = bucket(flo.y(), 1); j <= bucket(fhi.y(), 1); ++j) {
        for (int k = bucket(flo.z(), 2); k <= bucket(fhi.z(), 2); ++k) {
          cells_[std::size_t(j * n_ + k)].push_back(int(f));
        }
      }
    }
  }

  bool inside(const Vec3& p) const {
    if ((p.array() < lo_.array()).any() || (p.array() > hi_.array()).any()) return false;
    int crossings = 0;
    for (int f : cells_[std::size_t(bucket(p.y(), 1) * n_ + bucket(p.z(), 2))]) {
      const Vec3& a = mesh_.vertices[mesh_.faces[f][0]];
      const Vec3& b = mesh_.vertices[mesh_.faces[f][1]];
      const Vec3& c = mesh_.vertices[mesh_.faces[f][2]];
      // Barycentric test in the yz plane, then the x of the hit.
      const double d = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
      if (d == 0.0) continue;
      const double u = ((p.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (p.z() - a.z())) / d;
      const double v = ((b.y() - a.y()) * (p.z() - a.z()) - (p.y() - a.y()) * (b.z() - a.z())) / d;
      if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
      const double x = a.x() + u * (b.x() - a.x()) + v * (c.x() - a.x());
      if (x > p.x()) ++crossings;
    }
    return crossings % 2 == 1;
  }

 private:
  int bucket(double v, int axis) const {
    const double t = (v - lo_[axis]) / std::max(1e-300, hi_[axis] - lo_[axis]);
    return std::clamp(int(t * n_), 0, n_ - 1);
  }

  const TriMesh& mesh_;
  int n_;
  Vec3 lo_, hi_;
  std::vector<std::vector<int>> cells_;
};

inline double signed_volume(const TriMesh& m) {
  double v = 0.0;
  for (const auto& f : m.faces) {
    v += m.vertices[f[0]].dot(m.vertices[f[1]].cross(m.vertices[f[2]])) / 6.0;
  }
  return v;
}

inline bodyvox::voxcore::VoxelGrid random_grid(std::mt19937_64& rng, bodyvox::voxcore::GridDims dims,
                                               double density) {
  bodyvox::voxcore::VoxelGrid g(dims);
  std::bernoulli_distribution bit(density);
  for (auto& v : g.data) v = bit(rng) ? 1 : 0;
  return g;
}

// Relative error used by every finite-difference comparison in the suite.
// `floor` keeps near-zero components from dividing by ~0.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

// Central differences of a scalar function of a parameter vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Fourth-order central differences; larger steps keep summed-loss roundoff
// small relative to tiny gradient components.
inline std::vector<double> central_diff4(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    auto at = [&](double d) {
      x[i] = x0 + d;
      return f(x);
    };
    const double d1 = at(h) - at(-h);
    const double d2 = at(2 * h) - at(-2 * h);
    x[i] = x0;
    g[i] = (8.0 * d1 - d2) / (12.0 * h);
  }
  return g;
}

// Faces that cross some other face sharing no vertex with them. Two triangles
// in general position intersect iff an edge of one pierces the other.
inline std::size_t self_intersecting_faces(const TriMesh& m) {
  const auto& V = m.vertices;
  auto orient = [](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& p) {
    return (b - a).cross(c - a).dot(p - a);
  };
  auto pierces = [&](const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
    const double dp = orient(a, b, c, p), dq = orient(a, b, c, q);
    if ((dp > 0 && dq > 0) || (dp < 0 && dq < 0) || dp == dq) return false;
    const Vec3 x = p + (q - p) * (dp / (dp - dq));
    const Vec3 n = (b - a).cross(c - a);
    return n.dot((b - a).cross(x - a)) >= 0 && n.dot((c - b).cross(x - b)) >= 0 &&
           n.dot((a - c).cross(x - c)) >= 0;
  };
  auto tri_hit = [&](const std::array<int, 3>& f, const std::array<int, 3>& g) {
    for (int i = 0; i < 3; ++i) {
      if (pierces(V[f[i]], V[f[(i + 1) % 3]], V[g[0]], V[g[1]], V[g[2]])) return true;
      if (pierces(V[g[i]], V[g[(i + 1) % 3]], V[f[0]], V[f[1]], V[f[2]])) return true;
    }
    return false;
  };
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  double edge = 0.0;
  for (const auto& f : m.faces) {
    edge += (V[f[0]] - V[f[1]]).norm();
  }
  for (const auto& v : V) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double cell = 2.0 * edge / double(std::max<std::size_t>(1, m.faces.size()));
  const Vec3 ext = (hi - lo) / cell;
  const int nx = int(ext.x()) + 1, ny = int(ext.y()) + 1, nz = int(ext.z()) + 1;
  std::vector<std::vector<int>> buckets(std::size_t(nx) * std::size_t(ny) * std::size_t(nz));
  auto cell_of = [&](const Vec3& p) {
    const Vec3 g = (p - lo) / cell;
    return std::array<int, 3>{std::min(int(g.x()), nx - 1), std::min(int(g.y()), ny - 1), std::min(int(g.z()), nz - 1)};
  };
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& t = m.faces[f];
    const auto a = cell_of(V[t[0]].cwiseMin(V[t[1]]).cwiseMin(V[t[2]]));
    const auto b = cell_of(V[t[0]].cwiseMax(V[t[1]]).cwiseMax(V[t[2]]));
    for (int x = a[0]; x <= b[0]; ++x)
      for (int y = a[1]; y <= b[1]; ++y)
        for (int z = a[2]; z <= b[2]; ++z)
          buckets[(std::size_t(x) * std::size_t(ny) + std::size_t(y)) * std::size_t(nz) + std::size_t(z)].push_back(int(f));
  }
  std::vector<char> bad(m.faces.size(), 0);
  for (const auto& b : buckets) {
    for (std::size_t i = 0; i < b.size(); ++i)
      for (std::size_t j = i + 1; j < b.size(); ++j) {
        const auto& f = m.faces[std::size_t(b[i])];
        const auto& g = m.faces[std::size_t(b[j])];
        bool shared = false;
        for (int u : f)
          for (int w : g) shared |= u == w;
        if (!shared && tri_hit(f, g)) bad[std::size_t(b[i])] = bad[std::size_t(b[j])] = 1;
      }
  }
  return std::size_t(std::count(bad.begin(), bad.end(), 1));
}

}  // namespace testsupport
