#include "bodyvox/bodymodel.hpp"

#include <cmath>

namespace bodyvox::bodymodel {

const char* joint_name(int j) {
  static const std::array<const char*, kNumJoints> names = {
      "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis", "thorax",
      "upper_neck", "head_top", "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist"};
  require(j >= 0 && j < kNumJoints, ErrorCode::invalid_argument, "joint index out of range");
  return names[std::size_t(j)];
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 rodrigues(const Vec3& w) {
  const double t2 = w.squaredNorm();
  const Mat3 k = skew(w);
  if (t2 < 1e-16) return Mat3::Identity() + k + 0.5 * k * k;
  const double t = std::sqrt(t2);
  return Mat3::Identity() + (std::sin(t) / t) * k + ((1.0 - std::cos(t)) / t2) * k * k;
}

Mat3 left_jacobian(const Vec3& w) {
  const double t2 = w.squaredNorm();
  const Mat3 k = skew(w);
  if (t2 < 1e-16) return Mat3::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
  const double t = std::sqrt(t2);
  return Mat3::Identity() + ((1.0 - std::cos(t)) / t2) * k + ((t - std::sin(t)) / (t2 * t)) * k * k;
}

Eigen::VectorXd BodyParams::flatten() const {
  Eigen::VectorXd x(kNumParams);
  for (int j = 0; j < kNumJoints; ++j) x.segment<3>(kThetaOffset + 3 * j) = theta[std::size_t(j)];
  x.segment<3>(kTransOffset) = translation;
  x.segment<kNumShape>(kBetaOffset) = beta;
  return x;
}

BodyParams BodyParams::unflatten(const Eigen::VectorXd& x) {
  require(x.size() == kNumParams, ErrorCode::dim_mismatch, "parameter vector has the wrong length");
  BodyParams p;
  for (int j = 0; j < kNumJoints; ++j) p.theta[std::size_t(j)] = x.segment<3>(kThetaOffset + 3 * j);
  p.translation = x.segment<3>(kTransOffset);
  p.beta = x.segment<kNumShape>(kBetaOffset);
  return p;
}

bool BodyParams::finite() const {
  for (const auto& t : theta)
    if (!t.allFinite()) return false;
  return translation.allFinite() && beta.size() == kNumShape && beta.allFinite();
}

std::vector<int> BodyTemplate::topological_order() const {
  std::vector<int> order;
  std::array<bool, kNumJoints> placed{};
  while (int(order.size()) < kNumJoints) {
    const std::size_t before = order.size();
    for (int j = 0; j < kNumJoints; ++j) {
      const int p = parent[std::size_t(j)];
      if (!placed[std::size_t(j)] && (p < 0 || placed[std::size_t(p)])) {
        placed[std::size_t(j)] = true;
        order.push_back(j);
      }
    }
    require(order.size() > before, ErrorCode::invalid_argument, "kinematic tree has a cycle");
  }
  return order;
}

voxcore::TriMesh BodyTemplate::mesh() const {
  voxcore::TriMesh m;
  m.vertices = vertices;
  m.faces = faces;
  m.labels = labels;
  return m;
}

void BodyTemplate::validate() const {
  const std::size_t n = vertices.size();
  require(n > 0 && !faces.empty(), ErrorCode::invalid_argument, "template has no geometry");
  mesh().validate();
  require(basis.rows() == Eigen::Index(3 * n) && basis.cols() == kNumShape, ErrorCode::invalid_argument,
          "shape basis must be 3N x 10");
  require(skin.size() == n && labels.size() == n, ErrorCode::invalid_argument,
          "per-vertex arrays have the wrong length");
  int roots = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    const int p = parent[std::size_t(j)];
    require(p >= -1 && p < kNumJoints && p != j, ErrorCode::invalid_argument, "bad parent index");
    roots += p < 0;
  }
  require(roots == 1 && parent[std::size_t(root)] < 0, ErrorCode::invalid_argument,
          "kinematic tree needs exactly one root");
  (void)topological_order();
  for (const auto& s : skin) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      require(s.weight[std::size_t(k)] >= 0.0 && s.joint[std::size_t(k)] >= 0 &&
                  s.joint[std::size_t(k)] < kNumJoints,
              ErrorCode::invalid_argument, "bad skinning entry");
      sum += s.weight[std::size_t(k)];
    }
    require(std::abs(sum - 1.0) < 1e-9, ErrorCode::invalid_argument, "skinning weights must sum to 1");
  }
  require(regressor.size() == kNumJoints, ErrorCode::invalid_argument, "regressor needs 16 rows");
  for (const auto& row : regressor) {
    double sum = 0.0;
    for (const auto& [v, w] : row) {
      require(v >= 0 && std::size_t(v) < n && w >= 0.0, ErrorCode::invalid_argument, "bad regressor entry");
      sum += w;
    }
    require(std::abs(sum - 1.0) < 1e-9, ErrorCode::invalid_argument, "regressor rows must sum to 1");
  }
  for (int l : labels) {
    require(l >= 1 && l <= voxcore::kNumParts, ErrorCode::invalid_argument, "part labels must be 1..6");
  }
  for (int v : landmarks) {
    require(v >= 0 && std::size_t(v) < n, ErrorCode::invalid_argument, "landmark index out of range");
  }
}

std::vector<Vec3> shape(const BodyTemplate& model, const Eigen::VectorXd& beta) {
  require(beta.size() == kNumShape, ErrorCode::dim_mismatch, "beta must have 10 entries");
  const Eigen::VectorXd offset = model.basis * beta;
  std::vector<Vec3> rest(model.vertices.size());
  for (std::size_t v = 0; v < rest.size(); ++v) {
    rest[v] = model.vertices[v] + offset.segment<3>(Eigen::Index(3 * v));
  }
  return rest;
}

std::vector<Vec3> regress_joints(const BodyTemplate& model, const std::vector<Vec3>& vertices) {
  std::vector<Vec3> joints(kNumJoints, Vec3::Zero());
  for (int j = 0; j < kNumJoints; ++j) {
    for (const auto& [v, w] : model.regressor[std::size_t(j)]) joints[std::size_t(j)] += w * vertices[std::size_t(v)];
  }
  return joints;
}

PosedBody::PosedBody(const BodyTemplate& model, const BodyParams& params) : model_(model) {
  require(params.finite(), ErrorCode::non_finite, "body parameters are not finite");
  rest_ = shape(model, params.beta);
  rest_joints_ = regress_joints(model, rest_);
  joints_.assign(kNumJoints, Vec3::Zero());
  d_rest_joint_.assign(kNumJoints, {});
  d_posed_joint_.assign(kNumJoints, {});
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = 0; k < kNumShape; ++k) {
      Vec3 d = Vec3::Zero();
      for (const auto& [v, w] : model.regressor[std::size_t(j)]) {
        d += w * model.basis.block<3, 1>(Eigen::Index(3 * v), k);
      }
      d_rest_joint_[std::size_t(j)][std::size_t(k)] = d;
    }
  }
  for (int j : model.topological_order()) {
    const int p = model.parent[std::size_t(j)];
    const Mat3 local = rodrigues(params.theta[std::size_t(j)]);
    const Mat3 parent_rot = p < 0 ? Mat3::Identity() : global_rot_[std::size_t(p)];
    global_rot_[std::size_t(j)] = parent_rot * local;
    omega_[std::size_t(j)] = parent_rot * left_jacobian(params.theta[std::size_t(j)]);
    auto& dj = d_posed_joint_[std::size_t(j)];
    if (p < 0) {
      joints_[std::size_t(j)] = rest_joints_[std::size_t(j)] + params.translation;
      dj = d_rest_joint_[std::size_t(j)];
    } else {
      joints_[std::size_t(j)] =
          parent_rot * (rest_joints_[std::size_t(j)] - rest_joints_[std::size_t(p)]) + joints_[std::size_t(p)];
      for (int k = 0; k < kNumShape; ++k) {
        dj[std::size_t(k)] = parent_rot * (d_rest_joint_[std::size_t(j)][std::size_t(k)] -
                                           d_rest_joint_[std::size_t(p)][std::size_t(k)]) +
                             d_posed_joint_[std::size_t(p)][std::size_t(k)];
      }
    }
    ancestors_[std::size_t(j)].clear();
    for (int a = j; a >= 0; a = model.parent[std::size_t(a)]) ancestors_[std::size_t(j)].push_back(a);
  }
  vertices_.resize(rest_.size());
  for (std::size_t v = 0; v < rest_.size(); ++v) {
    Vec3 out = Vec3::Zero();
    const SkinWeights& s = model.skin[v];
    for (int k = 0; k < 4; ++k) {
      const double w = s.weight[std::size_t(k)];
      if (w == 0.0) continue;
      const auto m = std::size_t(s.joint[std::size_t(k)]);
      out += w * (global_rot_[m] * (rest_[v] - rest_joints_[m]) + joints_[m]);
    }
    vertices_[v] = out;
  }
}

int PosedBody::vertex_jacobian_compact(int v, std::array<int, kNumParams>& cols,
                                       Eigen::Matrix<double, 3, kNumParams>& block) const {
  const auto vi = std::size_t(v);
  const SkinWeights& s = model_.skin[vi];
  // Weighted posed position and total weight of the skin joints below each joint.
  std::array<Vec3, kNumJoints> below_pos;
  std::array<double, kNumJoints> below_w{};
  std::array<bool, kNumJoints> touched{};
  Eigen::Matrix<double, 3, kNumShape> dbeta = Eigen::Matrix<double, 3, kNumShape>::Zero();
  const auto basis_rows = model_.basis.block<3, kNumShape>(Eigen::Index(3 * vi), 0);
  for (int k = 0; k < 4; ++k) {
    const double w = s.weight[std::size_t(k)];
    if (w == 0.0) continue;
    const auto m = std::size_t(s.joint[std::size_t(k)]);
    const Vec3 posed = global_rot_[m] * (rest_[vi] - rest_joints_[m]) + joints_[m];
    for (int a : ancestors_[m]) {
      if (!touched[std::size_t(a)]) {
        touched[std::size_t(a)] = true;
        below_pos[std::size_t(a)] = Vec3::Zero();
      }
      below_pos[std::size_t(a)] += w * posed;
      below_w[std::size_t(a)] += w;
    }
    for (int b = 0; b < kNumShape; ++b) {
      dbeta.col(b) += w * (global_rot_[m] * (basis_rows.col(b) - d_rest_joint_[m][std::size_t(b)]) +
                           d_posed_joint_[m][std::size_t(b)]);
    }
  }
  int n = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!touched[std::size_t(j)]) continue;
    const Vec3 lever = below_pos[std::size_t(j)] - below_w[std::size_t(j)] * joints_[std::size_t(j)];
    for (int c = 0; c < 3; ++c) {
      cols[std::size_t(n)] = kThetaOffset + 3 * j + c;
      block.col(n++) = omega_[std::size_t(j)].col(c).cross(lever);
    }
  }
  for (int c = 0; c < 3; ++c) {
    cols[std::size_t(n)] = kTransOffset + c;
    block.col(n++) = Vec3::Unit(c);
  }
  for (int b = 0; b < kNumShape; ++b) {
    cols[std::size_t(n)] = kBetaOffset + b;
    block.col(n++) = dbeta.col(b);
  }
  return n;
}

Eigen::Matrix<double, 3, kNumParams> PosedBody::vertex_jacobian(int v) const {
  std::array<int, kNumParams> cols{};
  Eigen::Matrix<double, 3, kNumParams> block;
  const int n = vertex_jacobian_compact(v, cols, block);
  Eigen::Matrix<double, 3, kNumParams> full = Eigen::Matrix<double, 3, kNumParams>::Zero();
  for (int i = 0; i < n; ++i) full.col(cols[std::size_t(i)]) = block.col(i);
  return full;
}

Eigen::Matrix<double, 3, kNumParams> PosedBody::joint_jacobian(int j) const {
  Eigen::Matrix<double, 3, kNumParams> jac = Eigen::Matrix<double, 3, kNumParams>::Zero();
  const auto& chain = ancestors_[std::size_t(j)];
  for (std::size_t i = 1; i < chain.size(); ++i) {
    const auto k = std::size_t(chain[i]);
    const Vec3 lever = joints_[std::size_t(j)] - joints_[k];
    for (int c = 0; c < 3; ++c) jac.col(kThetaOffset + 3 * int(k) + c) = omega_[k].col(c).cross(lever);
  }
  jac.block<3, 3>(0, kTransOffset) = Mat3::Identity();
  for (int b = 0; b < kNumShape; ++b) jac.col(kBetaOffset + b) = d_posed_joint_[std::size_t(j)][std::size_t(b)];
  return jac;
}

std::vector<Vec3> pose_vertices(const BodyTemplate& model, const BodyParams& params) {
  return PosedBody(model, params).vertices();
}

std::vector<Vec3> landmarks(const BodyTemplate& model, const BodyParams& params) {
  const PosedBody body(model, params);
  std::vector<Vec3> out;
  out.reserve(model.landmarks.size());
  for (int v : model.landmarks) out.push_back(body.vertices()[std::size_t(v)]);
  return out;
}

}  // namespace bodyvox::bodymodel
