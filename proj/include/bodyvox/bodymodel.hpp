#pragma once

#include "bodyvox/voxcore.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bodyvox::bodymodel {

inline constexpr int kNumJoints = 16;
inline constexpr int kNumShape = 10;
inline constexpr int kNumLandmarks = 91;
// Parameter vector layout: 3 per joint (axis-angle), translation, shape.
inline constexpr int kThetaOffset = 0;
inline constexpr int kTransOffset = 3 * kNumJoints;
inline constexpr int kBetaOffset = kTransOffset + 3;
inline constexpr int kNumParams = kBetaOffset + kNumShape;

enum Joint : int {
  r_ankle, r_knee, r_hip, l_hip, l_knee, l_ankle, pelvis, thorax,
  upper_neck, head_top, r_wrist, r_elbow, r_shoulder, l_shoulder, l_elbow, l_wrist
};
const char* joint_name(int j);

enum Part : int { head = 1, torso = 2, left_arm = 3, right_arm = 4, left_leg = 5, right_leg = 6 };

struct SkinWeights {
  std::array<int, 4> joint{0, 0, 0, 0};
  std::array<double, 4> weight{0, 0, 0, 0};  // zero-padded; sums to 1
};

struct BodyTemplate {
  std::vector<Vec3> vertices;  // mm, T-pose, y up
  std::vector<std::array<int, 3>> faces;
  Eigen::MatrixXd basis;  // (3N) x K; rows 3v..3v+2 belong to vertex v
  std::vector<SkinWeights> skin;
  std::array<int, kNumJoints> parent{};
  int root = pelvis;
  // Sparse rows: (vertex, weight) pairs summing to 1.
  std::vector<std::vector<std::pair<int, double>>> regressor;
  std::vector<int> labels;
  std::vector<int> landmarks;

  std::size_t num_vertices() const { return vertices.size(); }
  // Checks every structural invariant; throws Error(invalid_argument).
  void validate() const;
  // Joints ordered so that parents precede children.
  std::vector<int> topological_order() const;
  voxcore::TriMesh mesh() const;
};

struct BodyParams {
  std::array<Vec3, kNumJoints> theta{};  // local axis-angle, radians
  Vec3 translation = Vec3::Zero();       // mm
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(kNumShape);

  BodyParams() { theta.fill(Vec3::Zero()); }
  Eigen::VectorXd flatten() const;
  static BodyParams unflatten(const Eigen::VectorXd& x);
  bool finite() const;
};

Mat3 rodrigues(const Vec3& axis_angle);
// Left Jacobian of SO(3): d exp(w + dw) = exp([J_l(w) dw]) exp(w).
Mat3 left_jacobian(const Vec3& axis_angle);
Mat3 skew(const Vec3& v);

// Rest vertices for a shape vector: template + basis * beta.
std::vector<Vec3> shape(const BodyTemplate& model, const Eigen::VectorXd& beta);
std::vector<Vec3> regress_joints(const BodyTemplate& model, const std::vector<Vec3>& vertices);

// Forward kinematics and skinning for one parameter set, with analytic
// derivatives of vertices and joints with respect to the flat parameters.
class PosedBody {
 public:
  PosedBody(const BodyTemplate& model, const BodyParams& params);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Vec3>& joints() const { return joints_; }

  // 3 x kNumParams derivative of a posed vertex / joint.
  Eigen::Matrix<double, 3, kNumParams> vertex_jacobian(int v) const;
  Eigen::Matrix<double, 3, kNumParams> joint_jacobian(int j) const;

  // Same derivative restricted to the columns that can be nonzero. `cols`
  // receives their indices in ascending order; returns the count.
  int vertex_jacobian_compact(int v, std::array<int, kNumParams>& cols,
                              Eigen::Matrix<double, 3, kNumParams>& block) const;

 private:
  const BodyTemplate& model_;
  std::vector<Vec3> rest_;
  std::vector<Vec3> rest_joints_;
  std::array<Mat3, kNumJoints> global_rot_;
  std::vector<Vec3> vertices_;
  std::vector<Vec3> joints_;
  // World angular velocity of joint k's rotation per axis-angle component.
  std::array<Mat3, kNumJoints> omega_;
  // d(rest joint) and d(posed joint) per shape coefficient: [joint][k].
  std::vector<std::array<Vec3, kNumShape>> d_rest_joint_;
  std::vector<std::array<Vec3, kNumShape>> d_posed_joint_;
  // ancestors_[j]: j and every ancestor, root last.
  std::array<std::vector<int>, kNumJoints> ancestors_;
};

// Convenience wrappers.
std::vector<Vec3> pose_vertices(const BodyTemplate& model, const BodyParams& params);
std::vector<Vec3> landmarks(const BodyTemplate& model, const BodyParams& params);

struct TemplateOptions {
  double cell_mm = 20.0;  // meshing resolution of the implicit body
};

// Procedural humanoid: a smooth union of capsules meshed by marching cubes,
// with a 16-joint tree, 6 parts, a 10-dimensional shape basis and 91
// landmarks. Deterministic in `seed`.
BodyTemplate make_synthetic_template(std::uint64_t seed, const TemplateOptions& opts = {});

// Directory layout: mesh.obj, skin.txt, regressor.txt, tree.txt, labels.txt,
// landmarks.txt, basis.bin (one JSON header line, then little-endian float32).
void save_template(const std::filesystem::path& dir, const BodyTemplate& model);
BodyTemplate load_template(const std::filesystem::path& dir);

std::string params_to_json(const BodyParams& p);
BodyParams params_from_json(const std::string& text);
void save_params(const std::filesystem::path& path, const BodyParams& p);
BodyParams load_params(const std::filesystem::path& path);

}  // namespace bodyvox::bodymodel
