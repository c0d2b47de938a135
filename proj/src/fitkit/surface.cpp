#include "bodyvox/fitkit.hpp"
#include "bodyvox/isosurface.hpp"
#include "bodyvox/spatial.hpp"

#include <Eigen/Eigenvalues>

namespace bodyvox::fitkit {

voxcore::TriMesh IsoSurface::mesh() const {
  voxcore::TriMesh m;
  m.vertices = vertices;
  m.faces = faces;
  return m;
}

IsoSurface marching_cubes(const voxcore::ProbVolume& vol, double iso) {
  require(vol.space == voxcore::Space::prob, ErrorCode::invalid_argument,
          "marching_cubes expects a probability volume");
  require(std::isfinite(iso), ErrorCode::invalid_argument, "iso level must be finite");
  vol.validate();
  auto s = isosurface::extract(vol.dims, vol.data, iso, 0.0);
  IsoSurface out;
  out.faces = std::move(s.faces);
  out.confidence = std::move(s.confidence);
  out.vertices.reserve(s.vertices.size());
  for (const auto& g : s.vertices) out.vertices.push_back(vol.transform.to_model(g));
  return out;
}

Matches correspondences(std::span<const Vec3> target, std::span<const double> target_weight,
                        std::span<const Vec3> model, MatchMode mode) {
  require(target_weight.empty() || target_weight.size() == target.size(), ErrorCode::dim_mismatch,
          "target weights must match target points");
  for (double w : target_weight) {
    require(w > 0.0 && std::isfinite(w), ErrorCode::invalid_argument, "target weights must be positive");
  }
  Matches m;
  if (target.empty() || model.empty()) return m;
  auto weight_of = [&](int i) { return target_weight.empty() ? 1.0 : target_weight[std::size_t(i)]; };

  if (mode == MatchMode::bidirectional) {
    const spatial::KdTree model_tree(model);
    m.forward.resize(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto hit = model_tree.nearest(target[i]);
      m.forward[i] = {int(i), hit.index, weight_of(int(i)), hit.cost};
    }
  }
  const spatial::KdTree target_tree(target, target_weight);
  m.backward.resize(model.size());
  for (std::size_t v = 0; v < model.size(); ++v) {
    const auto hit = target_weight.empty() ? target_tree.nearest(model[v]) : target_tree.nearest_weighted(model[v]);
    m.backward[v] = {hit.index, int(v), weight_of(hit.index), (target[std::size_t(hit.index)] - model[v]).squaredNorm()};
  }
  return m;
}

namespace {

Camera fit_camera(std::span<const Vec3> model_joints, std::span<const Vec2> image_joints, std::span<const int> which) {
  Vec2 pc = Vec2::Zero(), kc = Vec2::Zero();
  for (int j : which) {
    pc += model_joints[std::size_t(j)].head<2>();
    kc += image_joints[std::size_t(j)];
  }
  pc /= double(which.size());
  kc /= double(which.size());
  double num = 0.0, den = 0.0;
  for (int j : which) {
    const Vec2 dp = model_joints[std::size_t(j)].head<2>() - pc;
    num += dp.dot(image_joints[std::size_t(j)] - kc);
    den += dp.squaredNorm();
  }
  require(den > 0.0, ErrorCode::degenerate_input, "camera: coincident joints");
  Camera cam;
  cam.scale = num / den;
  require(cam.scale > 0.0, ErrorCode::degenerate_input, "camera: non-positive scale");
  cam.offset = kc - cam.scale * pc;
  return cam;
}

bool collinear(const std::vector<Vec2>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const auto ev = es.eigenvalues();
  return !(ev[1] > 0.0) || ev[0] <= 1e-8 * ev[1];
}

}  // namespace

Camera init_camera(std::span<const Vec3> model_joints, std::span<const Vec2> image_joints) {
  using namespace bodymodel;
  require(model_joints.size() == std::size_t(kNumJoints) && image_joints.size() == std::size_t(kNumJoints),
          ErrorCode::dim_mismatch, "camera: need one 3D and one 2D point per joint");
  const std::array<int, 4> torso = {r_hip, l_hip, r_shoulder, l_shoulder};
  std::vector<Vec2> p, k;
  for (int j : torso) {
    p.push_back(model_joints[std::size_t(j)].head<2>());
    k.push_back(image_joints[std::size_t(j)]);
  }
  require(!collinear(p) && !collinear(k), ErrorCode::degenerate_input,
          "camera: hip and shoulder joints are collinear");
  const Camera coarse = fit_camera(model_joints, image_joints, torso);
  std::array<int, kNumJoints> all{};
  for (int j = 0; j < kNumJoints; ++j) all[std::size_t(j)] = j;
  try {
    return fit_camera(model_joints, image_joints, all);
  } catch (const Error&) {
    return coarse;
  }
}

std::vector<Vec2> silhouette_contour(const projection::Silhouette& s) {
  std::vector<Vec2> out;
  auto fg = [&](int c, int r) { return c >= 0 && r >= 0 && c < s.cols && r < s.rows && s.at(c, r) >= 0.5; };
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c) {
      if (!fg(c, r)) continue;
      if (!fg(c - 1, r) || !fg(c + 1, r) || !fg(c, r - 1) || !fg(c, r + 1)) out.emplace_back(c + 0.5, r + 0.5);
    }
  return out;
}

projection::Silhouette render_silhouette(const std::vector<Vec3>& posed, const BodyTemplate& model,
                                         const Camera& camera, int cols, int rows) {
  require(cols > 0 && rows > 0, ErrorCode::invalid_argument, "silhouette size must be positive");
  voxcore::TriMesh m;
  m.faces = model.faces;
  m.vertices.reserve(posed.size());
  for (const auto& p : posed) {
    const Vec2 px = camera.project(p);
    m.vertices.emplace_back(px.x(), px.y(), 0.0);
  }
  return projection::rasterize_silhouette(m, voxcore::GridDims{cols, rows, 1}, projection::View::front);
}

}  // namespace bodyvox::fitkit
