#pragma once

#include "bodyvox/bodymodel.hpp"
#include "bodyvox/projection.hpp"
#include "bodyvox/voxcore.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bodyvox::fitkit {

using bodymodel::BodyParams;
using bodymodel::BodyTemplate;

struct IsoSurface {
  std::vector<Vec3> vertices;  // model space, mm
  std::vector<std::array<int, 3>> faces;
  std::vector<double> confidence;  // per vertex, in [0, 1]

  bool empty() const { return vertices.empty(); }
  voxcore::TriMesh mesh() const;
};

// Level set of a probability volume, mapped to model space by the volume's
// transform. Confidence is the larger probability on the lattice edge that
// carries the vertex.
IsoSurface marching_cubes(const voxcore::ProbVolume& vol, double iso = 0.5);

enum class MatchMode { bidirectional, model_to_target };

struct Match {
  int target = -1;  // network-side point
  int model = -1;
  double weight = 1.0;  // confidence of the target point
  double dist2 = 0.0;
};

struct Matches {
  std::vector<Match> forward;   // one per target point: its nearest model point
  std::vector<Match> backward;  // one per model point: argmin over targets of w * d^2
};

// Nearest-neighbor pairs with ties to the lowest index. `target_weight` may be
// empty (all ones); otherwise it must be positive and match `target`.
// model_to_target fills only `backward`.
Matches correspondences(std::span<const Vec3> target, std::span<const double> target_weight,
                        std::span<const Vec3> model, MatchMode mode);

// Orthographic camera: pixel = scale * (x, y) + offset.
struct Camera {
  double scale = 1.0;
  Vec2 offset = Vec2::Zero();
  Vec2 project(const Vec3& p) const { return scale * p.head<2>() + offset; }
};

// Least-squares scale and offset from hip and shoulder pairs, then refined on
// every joint. Throws degenerate_input when the hip/shoulder points are
// collinear in either space.
Camera init_camera(std::span<const Vec3> model_joints, std::span<const Vec2> image_joints);

// Centers of foreground pixels (>= 0.5) with a 4-neighbor in the background
// or on the image border, in pixel coordinates (pixel (c, r) at (c + .5, r + .5)).
std::vector<Vec2> silhouette_contour(const projection::Silhouette& s);

struct FitProblem {
  IsoSurface surface;
  std::vector<Vec3> joints3d;  // empty or one per joint, mm
  std::vector<Vec2> joints2d;  // empty or one per joint, pixels
  std::vector<Vec2> contour;   // network silhouette contour, pixels
  int image_cols = 0;          // pixel grid the model silhouette is rendered on
  int image_rows = 0;
  double lambda = 5.0;      // 3D joint weight of the Chamfer objective
  double lambda_j = 100.0;  // 3D joint weight of the silhouette objective
  double lambda_2d = 1.0;   // 2D joint weight of the silhouette objective
  double lambda_beta = 1.0;  // |beta|^2 weight of the silhouette objective
};

enum class Solver { dogleg, lm };

struct FitOptions {
  Solver solver = Solver::dogleg;
  int max_outer = 30;
  int max_inner = 10;
  double rel_tol = 1e-6;   // stop when the outer objective decreases by less (shape-only fits: when it stops changing)
  double abs_tol = 1e-12;  // or falls below this
  std::size_t max_points = 5000;  // per Chamfer direction
  std::uint64_t seed = 0;
  double contour_threshold = 10.0;  // pixels; contour weight is d / threshold
};

struct ResidualBreakdown {
  double chamfer_forward = 0.0;   // target -> model
  double chamfer_backward = 0.0;  // model -> target
  double joints3d = 0.0;
  double joints2d = 0.0;
  double contour = 0.0;
  double shape_prior = 0.0;
  double total = 0.0;
};

struct FitResult {
  BodyParams params;
  // Objective after each re-match and after each accepted step. trace_outer
  // tags each entry with the correspondence set it was evaluated on (0 = the
  // initial match); values within one set strictly decrease.
  std::vector<double> trace;
  std::vector<int> trace_outer;
  ResidualBreakdown residuals;
  bool converged = false;
  int outer_iterations = 0;
  std::optional<Camera> camera;
};

// Confidence-weighted bidirectional Chamfer objective plus lambda * 3D joint
// term, over pose, translation and shape.
FitResult fit_chamfer(const FitProblem& problem, const BodyTemplate& model, const BodyParams& init,
                  const FitOptions& opts = {});

// Same objective over shape and translation only, pose held at `pose`'s theta.
// Shape starts at zero and translation at `pose`'s translation.
FitResult fit_beta_only(const FitProblem& problem, const BodyTemplate& model, const BodyParams& pose,
                        const FitOptions& opts = {});

// Silhouette objective: model contour -> network contour with weight d / 10,
// lambda_j * 3D joint term, lambda_2d * 2D joint term and lambda_beta * |beta|^2.
// Every term is measured in pixels of the orthographic camera.
FitResult fit_silhouette(const FitProblem& problem, const BodyTemplate& model, const BodyParams& init,
                        const FitOptions& opts = {});

// Weight of a model contour point whose match lies `pixel_distance` away.
double contour_weight(double pixel_distance, double threshold = 10.0);

// Pixel silhouette of the posed model under a camera.
projection::Silhouette render_silhouette(const std::vector<Vec3>& posed, const BodyTemplate& model,
                                         const Camera& camera, int cols, int rows);

std::string result_to_json(const FitResult& r);
// Writes <stem>.json and <stem>.obj (the fitted posed mesh).
void write_result(const std::filesystem::path& stem, const FitResult& r, const BodyTemplate& model);

}  // namespace bodyvox::fitkit
