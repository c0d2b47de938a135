#include "bodyvox/projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace bodyvox::projection {

using voxcore::GridDims;
using voxcore::ProbVolume;
using voxcore::Space;
using voxcore::VoxelGrid;

const char* to_string(View v) { return v == View::front ? "FV" : "SV"; }

std::array<int, 2> view_shape(const GridDims& dims, View view) {
  return view == View::front ? std::array<int, 2>{dims.w, dims.h}
                             : std::array<int, 2>{dims.h, dims.d};
}

namespace {

// Folds `op` along the view axis starting from `init`.
template <typename Get, typename Op>
Silhouette reduce(const GridDims& dims, View view, double init, Get get, Op op) {
  const auto [cols, rows] = view_shape(dims, view);
  Silhouette s(cols, rows, view, init);
  for (int x = 0; x < dims.w; ++x) {
    for (int z = 0; z < dims.d; ++z) {
      for (int y = 0; y < dims.h; ++y) {
        double& px = view == View::front ? s.at(x, y) : s.at(y, z);
        px = op(px, get(dims.index(x, y, z)));
      }
    }
  }
  return s;
}

Silhouette max_project(const ProbVolume& vol, View view) {
  require(vol.space != Space::label, ErrorCode::invalid_argument,
          "project: label-space volume; use project_parts");
  require(vol.data.size() == vol.dims.count(), ErrorCode::dim_mismatch,
          "project: data length != W*H*D");
  const double lowest = vol.space == Space::logit ? -std::numeric_limits<double>::infinity() : 0.0;
  return reduce(vol.dims, view, lowest, [&](std::size_t i) { return vol.data[i]; },
                [](double a, double b) { return std::max(a, b); });
}

}  // namespace

Silhouette project(const ProbVolume& vol, View view) { return max_project(vol, view); }

Silhouette project(const VoxelGrid& grid, View view) {
  return reduce(grid.dims, view, 0.0, [&](std::size_t i) { return grid.data[i] ? 1.0 : 0.0; },
                [](double a, double b) { return std::max(a, b); });
}

std::vector<Silhouette> project_parts(std::span<const ProbVolume> channels, View view) {
  require(channels.size() == std::size_t(voxcore::kNumPartClasses), ErrorCode::dim_mismatch,
          "project_parts: expected 7 channels, got " + std::to_string(channels.size()));
  std::vector<Silhouette> out;
  out.reserve(channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const ProbVolume& ch = channels[c];
    require(ch.dims == channels[0].dims, ErrorCode::dim_mismatch, "project_parts: channel dims differ");
    require(ch.space == Space::prob, ErrorCode::invalid_argument,
            "project_parts: channels must be probabilities");
    if (c == 0) {
      out.push_back(reduce(ch.dims, view, 1.0, [&](std::size_t i) { return ch.data[i]; },
                           [](double a, double b) { return std::min(a, b); }));
    } else {
      out.push_back(max_project(ch, view));
    }
  }
  return out;
}

std::vector<ProbVolume> one_hot(const ProbVolume& labels, int classes) {
  require(labels.space == Space::label, ErrorCode::invalid_argument, "one_hot: expects labels");
  std::vector<ProbVolume> out(std::size_t(classes), ProbVolume(labels.dims, Space::prob));
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int c = int(labels.data[i]);
    require(c >= 0 && c < classes, ErrorCode::invalid_argument, "one_hot: label out of range");
    out[std::size_t(c)].data[i] = 1.0;
  }
  for (auto& ch : out) ch.transform = labels.transform;
  return out;
}

Silhouette gt_side_silhouette(const VoxelGrid& grid) { return project(grid, View::side); }

SilhouetteScores silhouette_metrics(const Silhouette& pred, const Silhouette& gt) {
  require(pred.cols == gt.cols && pred.rows == gt.rows, ErrorCode::dim_mismatch,
          "silhouette_metrics: dims differ");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] >= 0.5;
    const bool g = gt.data[i] >= 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  SilhouetteScores s;
  const std::size_t uni = tp + fp + fn;
  s.iou = uni == 0 ? 1.0 : double(tp) / double(uni);
  s.f1 = uni == 0 ? 1.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
  s.accuracy = pred.size() == 0 ? 1.0 : double(tp + tn) / double(pred.size());
  return s;
}

namespace {

double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Counter-clockwise winding with the second axis pointing up: left edges run
// downward, top edges run toward -x.
bool top_left(const Vec2& a, const Vec2& b) {
  const Vec2 e = b - a;
  return e.y() < 0.0 || (e.y() == 0.0 && e.x() < 0.0);
}

}  // namespace

Silhouette rasterize_silhouette(const voxcore::TriMesh& mesh, const GridDims& dims, View view) {
  const auto [cols, rows] = view_shape(dims, view);
  Silhouette s(cols, rows, view);
  auto flat = [view](const Vec3& p) {
    return view == View::front ? Vec2(p.x(), p.y()) : Vec2(p.y(), p.z());
  };
  for (const auto& f : mesh.faces) {
    Vec2 a = flat(mesh.vertices[f[0]]);
    Vec2 b = flat(mesh.vertices[f[1]]);
    Vec2 c = flat(mesh.vertices[f[2]]);
    const double area = edge_fn(a, b, c);
    if (area == 0.0) continue;
    if (area < 0.0) std::swap(b, c);
    const bool tl_ab = top_left(a, b), tl_bc = top_left(b, c), tl_ca = top_left(c, a);
    const Vec2 lo = a.cwiseMin(b).cwiseMin(c);
    const Vec2 hi = a.cwiseMax(b).cwiseMax(c);
    const int c0 = std::max(0, int(std::floor(lo.x() - 0.5)));
    const int c1 = std::min(cols - 1, int(std::ceil(hi.x() - 0.5)));
    const int r0 = std::max(0, int(std::floor(lo.y() - 0.5)));
    const int r1 = std::min(rows - 1, int(std::ceil(hi.y() - 0.5)));
    for (int r = r0; r <= r1; ++r) {
      for (int col = c0; col <= c1; ++col) {
        const Vec2 p(col + 0.5, r + 0.5);
        const double w0 = edge_fn(a, b, p), w1 = edge_fn(b, c, p), w2 = edge_fn(c, a, p);
        const bool in = (w0 > 0.0 || (w0 == 0.0 && tl_ab)) && (w1 > 0.0 || (w1 == 0.0 && tl_bc)) &&
                        (w2 > 0.0 || (w2 == 0.0 && tl_ca));
        if (in) s.at(col, r) = 1.0;
      }
    }
  }
  return s;
}

void write_pgm(const std::filesystem::path& path, const Silhouette& s) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  out << "P5\n" << s.cols << ' ' << s.rows << "\n255\n";
  for (int r = s.rows - 1; r >= 0; --r) {
    for (int c = 0; c < s.cols; ++c) out.put(char(s.at(c, r) >= 0.5 ? 255 : 0));
  }
  require(bool(out), ErrorCode::io, "write failed: " + path.string());
}

}  // namespace bodyvox::projection
