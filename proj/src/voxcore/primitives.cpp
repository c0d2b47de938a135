#include "bodyvox/primitives.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <numbers>

namespace bodyvox::primitives {

using voxcore::TriMesh;

TriMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(),
                            i & 4 ? hi.z() : lo.z());
  }
  // Outward counter-clockwise quads.
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

TriMesh make_icosphere(const Vec3& center, double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int id = int(verts.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = midpoint(f[0], f[1]);
      const int bc = midpoint(f[1], f[2]);
      const int ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh m;
  m.vertices.reserve(verts.size());
  for (const auto& v : verts) m.vertices.push_back(center + radius * v);
  m.faces = std::move(faces);
  return m;
}

TriMesh make_capsule(const Vec3& a, const Vec3& b, double radius, int slices, int cap_rings) {
  const double len = (b - a).norm();
  const Vec3 axis = len > 0.0 ? Vec3((b - a) / len) : Vec3::UnitZ();
  const Eigen::Quaterniond rot = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), axis);
  // Rings from the bottom pole to the top pole; each ring is (z offset, radius).
  std::vector<std::pair<double, double>> rings;
  for (int i = 1; i <= cap_rings; ++i) {
    const double phi = -std::numbers::pi / 2 + std::numbers::pi / 2 * double(i) / cap_rings;
    rings.emplace_back(radius * std::sin(phi), radius * std::cos(phi));
  }
  for (int i = 0; i < cap_rings; ++i) {
    const double phi = std::numbers::pi / 2 * double(i) / cap_rings;
    rings.emplace_back(len + radius * std::sin(phi), radius * std::cos(phi));
  }
  TriMesh m;
  auto place = [&](const Vec3& local) { m.vertices.push_back(a + rot * local); };
  place(Vec3(0, 0, -radius));
  for (const auto& [z, r] : rings) {
    for (int s = 0; s < slices; ++s) {
      const double th = 2.0 * std::numbers::pi * s / slices;
      place(Vec3(r * std::cos(th), r * std::sin(th), z));
    }
  }
  place(Vec3(0, 0, len + radius));
  const int bottom = 0;
  const int top = int(m.vertices.size()) - 1;
  auto ring_vertex = [&](int ring, int s) { return 1 + ring * slices + (s % slices); };
  for (int s = 0; s < slices; ++s) m.faces.push_back({bottom, ring_vertex(0, s + 1), ring_vertex(0, s)});
  for (int r = 0; r + 1 < int(rings.size()); ++r) {
    for (int s = 0; s < slices; ++s) {
      const int v00 = ring_vertex(r, s);
      const int v01 = ring_vertex(r, s + 1);
      const int v10 = ring_vertex(r + 1, s);
      const int v11 = ring_vertex(r + 1, s + 1);
      m.faces.push_back({v00, v01, v11});
      m.faces.push_back({v00, v11, v10});
    }
  }
  const int last = int(rings.size()) - 1;
  for (int s = 0; s < slices; ++s) m.faces.push_back({top, ring_vertex(last, s), ring_vertex(last, s + 1)});
  return m;
}

TriMesh merge(const TriMesh& a, const TriMesh& b) {
  TriMesh m = a;
  const int offset = int(a.vertices.size());
  m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (const auto& f : b.faces) m.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
  if (a.has_labels() && b.has_labels()) {
    m.labels.insert(m.labels.end(), b.labels.begin(), b.labels.end());
  } else {
    m.labels.clear();
  }
  return m;
}

}  // namespace bodyvox::primitives
