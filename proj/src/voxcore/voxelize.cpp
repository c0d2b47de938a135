#include "bodyvox/spatial.hpp"
#include "bodyvox/voxcore.hpp"

#include <cmath>
#include <deque>

namespace bodyvox::voxcore {

std::size_t VoxelGrid::occupied() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

const char* to_string(Space s) {
  switch (s) {
    case Space::logit: return "logit";
    case Space::prob: return "prob";
    case Space::label: return "label";
  }
  return "prob";
}

Space parse_space(const std::string& s) {
  if (s == "logit") return Space::logit;
  if (s == "prob") return Space::prob;
  if (s == "label") return Space::label;
  fail(ErrorCode::malformed_header, "unknown space tag '" + s + "'");
}

void ProbVolume::validate() const {
  require(data.size() == dims.count(), ErrorCode::dim_mismatch, "volume data length != W*H*D");
  for (double v : data) {
    require(std::isfinite(v), ErrorCode::non_finite, "volume holds a non-finite value");
    if (space == Space::prob) {
      require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument, "probability outside [0,1]");
    } else if (space == Space::label) {
      require(v >= 0.0 && v < kNumPartClasses && v == std::floor(v), ErrorCode::invalid_argument,
              "label outside 0..6");
    }
  }
}

ProbVolume ProbVolume::from_grid(const VoxelGrid& grid) {
  ProbVolume vol(grid.dims, Space::prob);
  vol.transform = grid.transform;
  for (std::size_t i = 0; i < grid.data.size(); ++i) vol.data[i] = grid.data[i] ? 1.0 : 0.0;
  return vol;
}

VoxelGrid ProbVolume::threshold(double t) const {
  VoxelGrid grid(dims, transform);
  for (std::size_t i = 0; i < data.size(); ++i) {
    grid.data[i] = space == Space::label ? data[i] > 0.0 : data[i] >= t;
  }
  return grid;
}

std::pair<TriMesh, GridTransform> align(const TriMesh& mesh, const Vec3& root,
                                        const AlignConfig& cfg) {
  require(!mesh.vertices.empty(), ErrorCode::invalid_argument, "align: empty mesh");
  require(root.allFinite(), ErrorCode::invalid_argument, "align: non-finite root");
  require(cfg.resolution > 0, ErrorCode::invalid_argument, "align: resolution must be positive");
  require(cfg.fill_ratio > 0.0 && cfg.fill_ratio <= 1.0, ErrorCode::invalid_argument,
          "align: fill_ratio must lie in (0, 1]");
  const Aabb box = bounds(mesh.vertices);
  const double extent = std::max(box.extent().x(), box.extent().y());
  require(extent > 0.0 && std::isfinite(extent), ErrorCode::degenerate_input,
          "align: zero xy extent");

  const double res = cfg.resolution;
  const double s = res * cfg.fill_ratio / extent;
  // grid = s * (p - anchor) + target
  const Vec3 anchor(box.center().x(), box.center().y(), root.z());
  const Vec3 target(res / 2.0, res / 2.0, res / 2.0);

  TriMesh out = mesh;
  for (auto& v : out.vertices) v = s * (v - anchor) + target;

  GridTransform tf;
  tf.longest = cfg.resolution;
  tf.scale = res / s;
  tf.translate = anchor - target / s;
  return {std::move(out), tf};
}

GridFrame make_frame(const TriMesh& mesh, const AlignConfig& cfg) {
  require(!mesh.vertices.empty(), ErrorCode::invalid_argument, "voxelize: empty mesh");
  const Vec3 root = cfg.root.value_or(bounds(mesh.vertices).center());
  auto [aligned, tf] = align(mesh, root, cfg);
  (void)aligned;
  return {GridDims{cfg.resolution, cfg.resolution, cfg.resolution}, tf};
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

bool axis_separates(const Vec3& axis, const Vec3& v0, const Vec3& v1, const Vec3& v2,
                    const Vec3& half) {
  const double p0 = axis.dot(v0);
  const double p1 = axis.dot(v1);
  const double p2 = axis.dot(v2);
  const double r = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) +
                   half.z() * std::abs(axis.z());
  const double lo = std::min(p0, std::min(p1, p2));
  const double hi = std::max(p0, std::max(p1, p2));
  return lo > r || hi < -r;
}

}  // namespace

bool triangle_box_overlap(const Vec3& center, const Vec3& half, const Vec3& a, const Vec3& b,
                          const Vec3& c) {
  const Vec3 v0 = a - center;
  const Vec3 v1 = b - center;
  const Vec3 v2 = c - center;
  // Box face normals.
  for (int k = 0; k < 3; ++k) {
    const double lo = std::min(v0[k], std::min(v1[k], v2[k]));
    const double hi = std::max(v0[k], std::max(v1[k], v2[k]));
    if (lo > half[k] || hi < -half[k]) return false;
  }
  const Vec3 e0 = v1 - v0;
  const Vec3 e1 = v2 - v1;
  const Vec3 e2 = v0 - v2;
  // Triangle plane.
  const Vec3 n = e0.cross(e1);
  {
    const double r = half.x() * std::abs(n.x()) + half.y() * std::abs(n.y()) +
                     half.z() * std::abs(n.z());
    const double s = n.dot(v0);
    if (s > r || s < -r) return false;
  }
  // Edge cross products.
  const Vec3 edges[3] = {e0, e1, e2};
  for (const Vec3& e : edges) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis = Vec3::Unit(k).cross(e);
      if (axis.squaredNorm() == 0.0) continue;
      if (axis_separates(axis, v0, v1, v2, half)) return false;
    }
  }
  return true;
}

namespace {

// Grid-space mesh; marks every cell whose closed box meets a triangle.
void rasterize_surface(const TriMesh& grid_mesh, VoxelGrid& grid) {
  const GridDims& dims = grid.dims;
  const Vec3 half(0.5, 0.5, 0.5);
  for (const auto& f : grid_mesh.faces) {
    const Vec3& a = grid_mesh.vertices[f[0]];
    const Vec3& b = grid_mesh.vertices[f[1]];
    const Vec3& c = grid_mesh.vertices[f[2]];
    const Vec3 lo = a.cwiseMin(b).cwiseMin(c);
    const Vec3 hi = a.cwiseMax(b).cwiseMax(c);
    // Closed cell [i, i+1] touches lo when i+1 >= lo.
    const int x0 = std::max(0, int(std::ceil(lo.x())) - 1);
    const int y0 = std::max(0, int(std::ceil(lo.y())) - 1);
    const int z0 = std::max(0, int(std::ceil(lo.z())) - 1);
    const int x1 = std::min(dims.w - 1, int(std::floor(hi.x())));
    const int y1 = std::min(dims.h - 1, int(std::floor(hi.y())));
    const int z1 = std::min(dims.d - 1, int(std::floor(hi.z())));
    for (int x = x0; x <= x1; ++x) {
      for (int z = z0; z <= z1; ++z) {
        for (int y = y0; y <= y1; ++y) {
          const std::size_t i = dims.index(x, y, z);
          if (grid.data[i]) continue;
          if (triangle_box_overlap(Vec3(x + 0.5, y + 0.5, z + 0.5), half, a, b, c)) {
            grid.data[i] = 1;
          }
        }
      }
    }
  }
}

}  // namespace

void fill_interior(VoxelGrid& grid) {
  const GridDims& dims = grid.dims;
  std::vector<std::uint8_t> outside(dims.count(), 0);
  std::deque<std::size_t> queue;
  auto seed = [&](int x, int y, int z) {
    const std::size_t i = dims.index(x, y, z);
    if (!grid.data[i] && !outside[i]) {
      outside[i] = 1;
      queue.push_back(i);
    }
  };
  for (int x = 0; x < dims.w; ++x) {
    for (int z = 0; z < dims.d; ++z) {
      for (int y = 0; y < dims.h; ++y) {
        if (x == 0 || y == 0 || z == 0 || x == dims.w - 1 || y == dims.h - 1 || z == dims.d - 1) {
          seed(x, y, z);
        }
      }
    }
  }
  static constexpr int kNeighbors[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                           {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  while (!queue.empty()) {
    const auto [x, y, z] = dims.coord(queue.front());
    queue.pop_front();
    for (const auto& n : kNeighbors) {
      const int nx = x + n[0];
      const int ny = y + n[1];
      const int nz = z + n[2];
      if (dims.contains(nx, ny, nz)) seed(nx, ny, nz);
    }
  }
  for (std::size_t i = 0; i < grid.data.size(); ++i) grid.data[i] = !outside[i];
}

VoxelGrid voxelize(const TriMesh& mesh, const GridFrame& frame, FillMode mode) {
  mesh.validate();
  require(frame.dims.count() > 0, ErrorCode::invalid_argument, "voxelize: empty grid");
  TriMesh grid_mesh = mesh;
  for (auto& v : grid_mesh.vertices) v = frame.transform.to_grid(v);

  VoxelGrid grid(frame.dims, frame.transform);
  rasterize_surface(grid_mesh, grid);
  if (mode == FillMode::solid) {
    if (mesh.is_watertight()) {
      fill_interior(grid);
    } else {
      grid.surface_only = true;
    }
  }
  return grid;
}

VoxelGrid voxelize(const TriMesh& mesh, const AlignConfig& cfg, FillMode mode) {
  return voxelize(mesh, make_frame(mesh, cfg), mode);
}

namespace {

int face_label(const TriMesh& mesh, const std::array<int, 3>& f) {
  std::array<int, kNumPartClasses> votes{};
  for (int v : f) ++votes[std::size_t(mesh.labels[v])];
  int best = 1;
  for (int l = 1; l < kNumPartClasses; ++l) {
    if (votes[std::size_t(l)] > votes[std::size_t(best)]) best = l;
  }
  return best;
}

}  // namespace

ProbVolume voxelize_parts(const TriMesh& mesh, const GridFrame& frame) {
  require(mesh.has_labels(), ErrorCode::invalid_argument, "voxelize_parts: mesh has no labels");
  mesh.validate();
  for (int l : mesh.labels) {
    require(l >= 1 && l <= kNumParts, ErrorCode::invalid_argument,
            "voxelize_parts: every vertex needs a part label in 1..6");
  }
  const VoxelGrid occ = voxelize(mesh, frame);

  std::vector<int> labels(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) labels[f] = face_label(mesh, mesh.faces[f]);

  TriMesh grid_mesh = mesh;
  for (auto& v : grid_mesh.vertices) v = frame.transform.to_grid(v);
  // One tree per label gives the tie rule (equal distance -> lowest label) directly.
  std::vector<spatial::TriangleTree> trees;
  std::vector<int> tree_label;
  for (int l = 1; l <= kNumParts; ++l) {
    std::vector<std::array<int, 3>> faces;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      if (labels[f] == l) faces.push_back(mesh.faces[f]);
    }
    if (faces.empty()) continue;
    trees.emplace_back(grid_mesh.vertices, faces);
    tree_label.push_back(l);
  }

  ProbVolume out(frame.dims, Space::label, 0.0);
  out.transform = frame.transform;
  for (std::size_t i = 0; i < occ.data.size(); ++i) {
    if (!occ.data[i]) continue;
    const auto [x, y, z] = frame.dims.coord(i);
    const Vec3 q(x + 0.5, y + 0.5, z + 0.5);
    double best = std::numeric_limits<double>::infinity();
    int best_label = 0;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      const double d2 = trees[t].closest(q).dist2;
      if (d2 < best) {
        best = d2;
        best_label = tree_label[t];
      }
    }
    out.data[i] = best_label;
  }
  return out;
}

ProbVolume voxelize_parts(const TriMesh& mesh, const AlignConfig& cfg) {
  return voxelize_parts(mesh, make_frame(mesh, cfg));
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b) {
  require(a.dims == b.dims, ErrorCode::dim_mismatch, "voxel_iou: grids differ in size");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool u = a.data[i] != 0;
    const bool v = b.data[i] != 0;
    inter += u && v;
    uni += u || v;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace bodyvox::voxcore
