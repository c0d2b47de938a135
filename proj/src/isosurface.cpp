#include "bodyvox/isosurface.hpp"

#include <unordered_map>

namespace bodyvox::isosurface {

namespace {

// Cube corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
Vec3 corner_pos(int c) { return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1); }

struct CubeEdge {
  int from;  // corner with the lower coordinate
  int axis;
};

// Edge a*4 + k runs along axis a from the k-th corner whose bit a is clear.
const std::array<CubeEdge, 12>& cube_edges() {
  static const std::array<CubeEdge, 12> edges = [] {
    std::array<CubeEdge, 12> e{};
    int n = 0;
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 8; ++c)
        if (!(c & (1 << a))) e[std::size_t(n++)] = {c, a};
    return e;
  }();
  return edges;
}

int edge_between(int c0, int c1) {
  const int diff = c0 ^ c1;
  const int axis = diff == 1 ? 0 : diff == 2 ? 1 : 2;
  const int lo = std::min(c0, c1);
  const auto& edges = cube_edges();
  for (int i = 0; i < 12; ++i) {
    if (edges[std::size_t(i)].from == lo && edges[std::size_t(i)].axis == axis) return i;
  }
  return -1;
}

Vec3 edge_mid(int e) {
  const auto& ce = cube_edges()[std::size_t(e)];
  Vec3 p = corner_pos(ce.from);
  p[ce.axis] += 0.5;
  return p;
}

using LoopTable = std::array<std::vector<std::vector<int>>, 256>;

// Boundary loops of the inside region on the cube surface, one table entry
// per inside-corner mask. Built from per-face segments, each oriented so the
// resulting fan triangles face away from the inside corners.
LoopTable build_table() {
  LoopTable table;
  for (int mask = 1; mask < 255; ++mask) {
    std::array<int, 12> next;
    next.fill(-1);
    for (int axis = 0; axis < 3; ++axis) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      for (int side = 0; side < 2; ++side) {
        Vec3 normal = Vec3::Zero();
        normal[axis] = side ? 1.0 : -1.0;
        std::array<int, 4> q{};
        const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
        for (int i = 0; i < 4; ++i) q[std::size_t(i)] = (side << axis) | (uv[i][0] << u) | (uv[i][1] << v);
        auto inside = [&](int i) { return (mask >> q[std::size_t((i + 4) % 4)]) & 1; };
        std::vector<int> crossing;
        for (int i = 0; i < 4; ++i) {
          if (inside(i) != inside(i + 1)) crossing.push_back(i);
        }
        auto add = [&](int ea, int eb, int corner) {
          const Vec3 a = edge_mid(ea), b = edge_mid(eb), c = corner_pos(corner);
          if ((b - a).cross(c - a).dot(normal) > 0.0) std::swap(ea, eb);
          next[std::size_t(ea)] = eb;
        };
        auto edge_at = [&](int i) { return edge_between(q[std::size_t(i % 4)], q[std::size_t((i + 1) % 4)]); };
        if (crossing.size() == 2) {
          int in_corner = -1;
          for (int i = 0; i < 4; ++i)
            if (inside(i)) in_corner = q[std::size_t(i)];
          add(edge_at(crossing[0]), edge_at(crossing[1]), in_corner);
        } else if (crossing.size() == 4) {
          for (int i = 0; i < 4; ++i) {
            if (inside(i)) add(edge_at(i + 3), edge_at(i), q[std::size_t(i)]);
          }
        }
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[std::size_t(start)] < 0 || used[std::size_t(start)]) continue;
      std::vector<int> loop;
      for (int e = start; !used[std::size_t(e)]; e = next[std::size_t(e)]) {
        used[std::size_t(e)] = true;
        loop.push_back(e);
      }
      table[std::size_t(mask)].push_back(std::move(loop));
    }
  }
  return table;
}

const LoopTable& loop_table() {
  static const LoopTable table = build_table();
  return table;
}

}  // namespace

Surface extract(const voxcore::GridDims& dims, std::span<const double> values, double iso, double outside) {
  require(values.size() == dims.count(), ErrorCode::dim_mismatch, "isosurface: data length != W*H*D");
  const LoopTable& table = loop_table();
  const auto& edges = cube_edges();
  auto sample = [&](int x, int y, int z) {
    return dims.contains(x, y, z) ? values[dims.index(x, y, z)] : outside;
  };
  const std::int64_t ph = dims.h + 2, pd = dims.d + 2;
  auto lattice_id = [&](int x, int y, int z) {
    return ((std::int64_t(x) + 1) * ph + (y + 1)) * pd + (z + 1);
  };

  Surface s;
  std::unordered_map<std::int64_t, int> vertex_of_edge;
  std::array<double, 8> corner_value{};
  std::array<int, 12> local_vertex{};
  for (int x = -1; x < dims.w; ++x) {
    for (int y = -1; y < dims.h; ++y) {
      for (int z = -1; z < dims.d; ++z) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          corner_value[std::size_t(c)] = sample(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
          if (corner_value[std::size_t(c)] > iso) mask |= 1 << c;
        }
        if (mask == 0 || mask == 255) continue;
        local_vertex.fill(-1);
        for (const auto& loop : table[std::size_t(mask)]) {
          for (int e : loop) {
            const CubeEdge& ce = edges[std::size_t(e)];
            const int cx = x + (ce.from & 1), cy = y + ((ce.from >> 1) & 1), cz = z + ((ce.from >> 2) & 1);
            const std::int64_t key = lattice_id(cx, cy, cz) * 3 + ce.axis;
            auto [it, fresh] = vertex_of_edge.try_emplace(key, int(s.vertices.size()));
            if (fresh) {
              const double v0 = corner_value[std::size_t(ce.from)];
              const double v1 = corner_value[std::size_t(ce.from | (1 << ce.axis))];
              Vec3 p(cx + 0.5, cy + 0.5, cz + 0.5);
              p[ce.axis] += (iso - v0) / (v1 - v0);
              s.vertices.push_back(p);
              s.confidence.push_back(std::max(v0, v1));
            }
            local_vertex[std::size_t(e)] = it->second;
          }
          for (std::size_t i = 1; i + 1 < loop.size(); ++i) {
            s.faces.push_back({local_vertex[std::size_t(loop[0])], local_vertex[std::size_t(loop[i])],
                               local_vertex[std::size_t(loop[i + 1])]});
          }
        }
      }
    }
  }
  return s;
}

}  // namespace bodyvox::isosurface
