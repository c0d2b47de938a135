#pragma once

#include "bodyvox/common.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace bodyvox::voxcore {

inline constexpr int kNumParts = 6;
inline constexpr int kNumPartClasses = 7;  // parts plus background (label 0)

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<int> labels;  // empty or one part id per vertex

  bool empty() const { return vertices.empty() || faces.empty(); }
  bool has_labels() const { return !labels.empty(); }

  // Throws Error(invalid_argument) on out-of-range or repeated face indices,
  // non-finite coordinates, or a label array of the wrong length.
  void validate() const;

  // Every undirected edge is shared by exactly two faces with opposite winding.
  bool is_watertight() const;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

Aabb bounds(std::span<const Vec3> points);

struct GridDims {
  int w = 0;  // x
  int h = 0;  // y
  int d = 0;  // z

  std::size_t count() const { return std::size_t(w) * std::size_t(h) * std::size_t(d); }
  // y fastest, then z, then x (binvox order).
  std::size_t index(int x, int y, int z) const {
    return (std::size_t(x) * std::size_t(d) + std::size_t(z)) * std::size_t(h) + std::size_t(y);
  }
  std::array<int, 3> coord(std::size_t i) const {
    const int y = int(i % std::size_t(h));
    const std::size_t xz = i / std::size_t(h);
    return {int(xz / std::size_t(d)), y, int(xz % std::size_t(d))};
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < w && y < h && z < d;
  }
  int longest() const { return std::max(w, std::max(h, d)); }
  bool operator==(const GridDims&) const = default;
};

// Maps grid space (cell i spans [i, i+1) on each axis) to model space with a
// uniform scale. Stored in binvox terms: `scale` is the model-space length of
// the longest grid axis, `translate` the model position of the grid corner.
struct GridTransform {
  Vec3 translate = Vec3::Zero();
  double scale = 1.0;
  int longest = 1;

  double cell_size() const { return scale / double(longest); }
  Vec3 to_model(const Vec3& g) const { return translate + g * cell_size(); }
  Vec3 to_grid(const Vec3& p) const { return (p - translate) / cell_size(); }
  Vec3 cell_center(int x, int y, int z) const {
    return to_model(Vec3(x + 0.5, y + 0.5, z + 0.5));
  }
  bool operator==(const GridTransform&) const = default;
};

struct GridFrame {
  GridDims dims;
  GridTransform transform;
};

struct VoxelGrid {
  GridDims dims;
  std::vector<std::uint8_t> data;  // 0 or 1, dims.index() order
  GridTransform transform;
  // Set when solid voxelization was requested on an open mesh; the grid then
  // holds surface cells only.
  bool surface_only = false;

  VoxelGrid() = default;
  explicit VoxelGrid(GridDims dims_, GridTransform transform_ = {})
      : dims(dims_), data(dims_.count(), 0), transform(transform_) {}

  bool at(int x, int y, int z) const { return data[dims.index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { data[dims.index(x, y, z)] = v ? 1 : 0; }
  std::size_t occupied() const;
};

enum class Space { logit, prob, label };

const char* to_string(Space s);
Space parse_space(const std::string& s);

struct ProbVolume {
  GridDims dims;
  std::vector<double> data;
  Space space = Space::prob;
  GridTransform transform;

  ProbVolume() = default;
  ProbVolume(GridDims dims_, Space space_, double fill = 0.0)
      : dims(dims_), data(dims_.count(), fill), space(space_) {}

  double at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }
  double& at(int x, int y, int z) { return data[dims.index(x, y, z)]; }

  // Checks the value-range invariant of the space tag.
  void validate() const;

  static ProbVolume from_grid(const VoxelGrid& grid);
  VoxelGrid threshold(double t = 0.5) const;  // value >= t is occupied
};

struct AlignConfig {
  int resolution = 128;
  double fill_ratio = 0.95;
  // Model-space point placed at depth D/2; the mesh bbox center when unset.
  std::optional<Vec3> root;
};

// Uniformly rescales so the larger of the x/y extents spans
// resolution * fill_ratio cells, centers the xy footprint, and places the root
// at depth D/2. Returns the grid-space mesh and the grid->model transform.
std::pair<TriMesh, GridTransform> align(const TriMesh& mesh, const Vec3& root,
                                        const AlignConfig& cfg);

GridFrame make_frame(const TriMesh& mesh, const AlignConfig& cfg);

enum class FillMode { solid, surface };

VoxelGrid voxelize(const TriMesh& mesh, const AlignConfig& cfg,
                   FillMode mode = FillMode::solid);
VoxelGrid voxelize(const TriMesh& mesh, const GridFrame& frame,
                   FillMode mode = FillMode::solid);

// Marks cells not reachable from the grid boundary through 6-connected empty
// cells. Idempotent.
void fill_interior(VoxelGrid& grid);

// Label-space volume; occupied cells take the part of the nearest triangle.
ProbVolume voxelize_parts(const TriMesh& mesh, const AlignConfig& cfg);
ProbVolume voxelize_parts(const TriMesh& mesh, const GridFrame& frame);

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

// Separating-axis triangle / axis-aligned box test (closed sets).
bool triangle_box_overlap(const Vec3& box_center, const Vec3& half_size,
                          const Vec3& a, const Vec3& b, const Vec3& c);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// binvox v1 run-length files.
void write_grid(std::ostream& out, const VoxelGrid& grid);
VoxelGrid read_grid(std::istream& in);
void write_grid(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_grid(const std::filesystem::path& path);

// Wavefront OBJ, `v` and `f` records only.
TriMesh read_obj(const std::filesystem::path& path);
TriMesh read_obj(std::istream& in);
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);
void write_obj(std::ostream& out, const TriMesh& mesh);

// `vertex_index part_id` per line, 0-based vertex indices.
std::vector<int> read_labels(const std::filesystem::path& path, std::size_t vertex_count);
void write_labels(const std::filesystem::path& path, std::span<const int> labels);

}  // namespace bodyvox::voxcore
