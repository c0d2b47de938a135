#include "bodyvox/fitkit.hpp"
#include "bodyvox/spatial.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bodyvox::fitkit {

using namespace bodymodel;

namespace {

constexpr int kP = kNumParams;

enum class TermKind { forward, backward, joints3d, joints2d, contour };

// One squared residual sum_c w_c (x_c - q_c)^2 on a posed vertex or joint.
struct Term {
  TermKind kind;
  bool on_joint;
  int index;
  Vec3 w;
  Vec3 q;
};

// Terms folded per vertex / joint into one weighted target, plus the constant
// that keeps the folded objective equal to the raw sum.
struct Targets {
  std::vector<Term> terms;
  std::vector<Vec3> vw, vm;
  std::vector<int> vertices;  // vertices with nonzero weight
  std::array<Vec3, kNumJoints> jw, jm;
  double constant = 0.0;
  double shape_prior = 0.0;  // weight of |beta|^2

  void fold(std::size_t num_vertices) {
    vw.assign(num_vertices, Vec3::Zero());
    vm.assign(num_vertices, Vec3::Zero());
    jw.fill(Vec3::Zero());
    jm.fill(Vec3::Zero());
    std::vector<double> vq(num_vertices, 0.0);
    std::array<double, kNumJoints> jq{};
    for (const auto& t : terms) {
      const auto i = std::size_t(t.index);
      Vec3& w = t.on_joint ? jw[i] : vw[i];
      Vec3& m = t.on_joint ? jm[i] : vm[i];
      double& q = t.on_joint ? jq[i] : vq[i];
      w += t.w;
      m += t.w.cwiseProduct(t.q);
      q += t.w.dot(t.q.cwiseProduct(t.q));
    }
    constant = 0.0;
    auto finish = [&](Vec3& w, Vec3& m, double q) {
      for (int c = 0; c < 3; ++c) {
        if (w[c] > 0.0) {
          constant -= m[c] * m[c] / w[c];
          m[c] /= w[c];
        }
      }
      constant += q;
    };
    vertices.clear();
    for (std::size_t v = 0; v < num_vertices; ++v) {
      if (vw[v].isZero()) continue;
      finish(vw[v], vm[v], vq[v]);
      vertices.push_back(int(v));
    }
    for (std::size_t j = 0; j < std::size_t(kNumJoints); ++j) finish(jw[j], jm[j], jq[j]);
  }

  double objective(const PosedBody& body, const Eigen::VectorXd& x) const {
    double e = constant + shape_prior * x.segment<kNumShape>(kBetaOffset).squaredNorm();
    for (int v : vertices) {
      const Vec3 r = body.vertices()[std::size_t(v)] - vm[std::size_t(v)];
      e += vw[std::size_t(v)].dot(r.cwiseProduct(r));
    }
    for (std::size_t j = 0; j < std::size_t(kNumJoints); ++j) {
      const Vec3 r = body.joints()[j] - jm[j];
      e += jw[j].dot(r.cwiseProduct(r));
    }
    return std::max(e, 0.0);
  }

  ResidualBreakdown breakdown(const PosedBody& body, const Eigen::VectorXd& x) const {
    ResidualBreakdown b;
    b.shape_prior = shape_prior * x.segment<kNumShape>(kBetaOffset).squaredNorm();
    for (const auto& t : terms) {
      const Vec3& p = t.on_joint ? body.joints()[std::size_t(t.index)] : body.vertices()[std::size_t(t.index)];
      const Vec3 r = p - t.q;
      const double e = t.w.dot(r.cwiseProduct(r));
      switch (t.kind) {
        case TermKind::forward: b.chamfer_forward += e; break;
        case TermKind::backward: b.chamfer_backward += e; break;
        case TermKind::joints3d: b.joints3d += e; break;
        case TermKind::joints2d: b.joints2d += e; break;
        case TermKind::contour: b.contour += e; break;
      }
    }
    b.total = b.chamfer_forward + b.chamfer_backward + b.joints3d + b.joints2d + b.contour + b.shape_prior;
    return b;
  }
};

// Gauss-Newton normal equations of the folded objective.
void linearize(const PosedBody& body, const Targets& t, const Eigen::VectorXd& x, Eigen::Matrix<double, kP, kP>& h,
               Eigen::Matrix<double, kP, 1>& g) {
  h.setZero();
  g.setZero();
  for (int k = kBetaOffset; k < kP; ++k) {
    h(k, k) = t.shape_prior;
    g[k] = t.shape_prior * x[k];
  }
  std::array<int, kP> cols{};
  Eigen::Matrix<double, 3, kP> block;
  for (int v : t.vertices) {
    const int n = body.vertex_jacobian_compact(v, cols, block);
    const Vec3& w = t.vw[std::size_t(v)];
    const Vec3 r = body.vertices()[std::size_t(v)] - t.vm[std::size_t(v)];
    const Vec3 wr = w.cwiseProduct(r);
    for (int a = 0; a < n; ++a) {
      const auto ca = cols[std::size_t(a)];
      const Vec3 wa = w.cwiseProduct(block.col(a));
      g[ca] += block.col(a).dot(wr);
      for (int b = 0; b <= a; ++b) h(ca, cols[std::size_t(b)]) += wa.dot(block.col(b));
    }
  }
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3& w = t.jw[std::size_t(j)];
    if (w.isZero()) continue;
    const auto jac = body.joint_jacobian(j);
    const Vec3 r = body.joints()[std::size_t(j)] - t.jm[std::size_t(j)];
    g += jac.transpose() * w.cwiseProduct(r);
    h.triangularView<Eigen::Lower>() += jac.transpose() * w.asDiagonal() * jac;
  }
  // E(x + h) ~ E + 2 g.h + h.H.h with these g and H.
  h = h.selfadjointView<Eigen::Lower>();
}

double wrap_angle_norm(Vec3& w) {
  const double a = w.norm();
  if (a > M_PI) w *= (a - 2.0 * M_PI * std::ceil((a - M_PI) / (2.0 * M_PI))) / a;
  return w.norm();
}

BodyParams canonical(BodyParams p) {
  for (auto& t : p.theta) wrap_angle_norm(t);
  return p;
}

// Systematic sample with a seeded offset: every index is kept with the same
// probability, and spatially ordered inputs are covered evenly.
std::vector<int> subsample(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<int> idx;
  if (n <= cap) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  std::mt19937_64 rng(seed);
  const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double stride = double(n) / double(cap);
  idx.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i)
    idx.push_back(int(std::min<double>(double(n - 1), std::floor((double(i) + offset) * stride))));
  return idx;
}

enum class StepMode { dogleg, lm, linear };

class Engine {
 public:
  Engine(const BodyTemplate& model, std::vector<int> active, StepMode mode, const FitOptions& opts)
      : model_(model), active_(std::move(active)), mode_(mode), opts_(opts) {}

  // Runs up to max_inner accepted-or-rejected steps on frozen targets.
  void inner(Eigen::VectorXd& x, const Targets& t, FitResult& out, int outer) {
    const int na = int(active_.size());
    Eigen::Matrix<double, kP, kP> hf;
    Eigen::Matrix<double, kP, 1> gf;
    auto relinearize = [&](const PosedBody& body, const Eigen::VectorXd& at) {
      linearize(body, t, at, hf, gf);
      h_.resize(na, na);
      g_.resize(na);
      for (int a = 0; a < na; ++a) {
        g_[a] = gf[active_[std::size_t(a)]];
        for (int b = 0; b < na; ++b) h_(a, b) = hf(active_[std::size_t(a)], active_[std::size_t(b)]);
      }
    };
    {
      const PosedBody body(model_, BodyParams::unflatten(x));
      relinearize(body, x);
    }
    double e = t.objective(PosedBody(model_, BodyParams::unflatten(x)), x);
    for (int it = 0; it < opts_.max_inner; ++it) {
      if (g_.norm() == 0.0) break;
      const Eigen::VectorXd step = propose();
      if (!step.allFinite() || step.norm() <= 1e-14 * (1.0 + x.norm())) break;
      const double pred = -(2.0 * g_.dot(step) + step.dot(h_ * step));
      Eigen::VectorXd trial = x;
      for (int a = 0; a < na; ++a) trial[active_[std::size_t(a)]] += step[a];
      const PosedBody body(model_, BodyParams::unflatten(trial));
      const double e_new = t.objective(body, trial);
      const double rho = pred > 0.0 ? (e - e_new) / pred : -1.0;
      const bool accept = e_new < e;
      adapt(rho, accept);
      if (accept) {
        x = trial;
        e = e_new;
        out.trace.push_back(e);
        out.trace_outer.push_back(outer);
        if (mode_ == StepMode::linear) break;
        relinearize(body, x);
      } else if (mode_ == StepMode::linear || radius_ < 1e-12) {
        break;
      }
    }
  }

 private:
  Eigen::VectorXd gauss_newton() const {
    Eigen::MatrixXd a = h_;
    const double ridge = 1e-12 * std::max(1.0, a.diagonal().maxCoeff());
    a.diagonal().array() += ridge;
    return Eigen::LDLT<Eigen::MatrixXd>(a).solve(-g_);
  }

  Eigen::VectorXd propose() {
    if (mode_ == StepMode::linear) return gauss_newton();
    if (mode_ == StepMode::lm) {
      if (mu_ < 0.0) mu_ = 1e-3;
      Eigen::MatrixXd a = h_;
      const Eigen::VectorXd d = h_.diagonal().cwiseMax(1e-12 * std::max(1.0, h_.diagonal().maxCoeff()));
      a.diagonal() += mu_ * d;
      return Eigen::LDLT<Eigen::MatrixXd>(a).solve(-g_);
    }
    // Dogleg in variables scaled by sqrt(diag H).
    const Eigen::VectorXd d =
        h_.diagonal().cwiseMax(1e-12 * std::max(1.0, h_.diagonal().maxCoeff())).cwiseSqrt();
    const Eigen::VectorXd gn = gauss_newton();
    const Eigen::VectorXd gn_s = d.cwiseProduct(gn);
    if (radius_ < 0.0) radius_ = gn_s.norm();
    if (gn_s.norm() <= radius_) return gn;
    const Eigen::VectorXd gs = g_.cwiseQuotient(d);
    const Eigen::VectorXd hgs = h_ * gs.cwiseQuotient(d);
    const double curv = gs.cwiseQuotient(d).dot(hgs);
    const double alpha = curv > 0.0 ? gs.squaredNorm() / curv : radius_ / gs.norm();
    const Eigen::VectorXd sd_s = -alpha * gs;
    Eigen::VectorXd s;
    if (sd_s.norm() >= radius_) {
      s = sd_s * (radius_ / sd_s.norm());
    } else {
      const Eigen::VectorXd diff = gn_s - sd_s;
      const double a = diff.squaredNorm(), b = 2.0 * sd_s.dot(diff), c = sd_s.squaredNorm() - radius_ * radius_;
      const double tau = (-b + std::sqrt(std::max(0.0, b * b - 4.0 * a * c))) / (2.0 * a);
      s = sd_s + tau * diff;
    }
    last_scaled_norm_ = s.norm();
    return s.cwiseQuotient(d);
  }

  void adapt(double rho, bool accept) {
    if (mode_ == StepMode::lm) {
      if (accept && rho > 0.0) {
        mu_ *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu_ = 2.0;
      } else {
        mu_ *= nu_;
        nu_ *= 2.0;
      }
      return;
    }
    if (mode_ != StepMode::dogleg) return;
    if (rho < 0.25) {
      radius_ = 0.5 * std::min(radius_, last_scaled_norm_ > 0.0 ? last_scaled_norm_ : radius_);
    } else if (rho > 0.75) {
      radius_ = std::max(radius_, 3.0 * last_scaled_norm_);
    }
  }

  const BodyTemplate& model_;
  std::vector<int> active_;
  StepMode mode_;
  FitOptions opts_;
  Eigen::MatrixXd h_;
  Eigen::VectorXd g_;
  double radius_ = -1.0;
  double last_scaled_norm_ = 0.0;
  double mu_ = -1.0;
  double nu_ = 2.0;
};

std::vector<int> all_params() {
  std::vector<int> a(kP);
  std::iota(a.begin(), a.end(), 0);
  return a;
}

std::vector<int> shape_and_translation() {
  std::vector<int> a;
  for (int i = kTransOffset; i < kP; ++i) a.push_back(i);
  return a;
}

void check_options(const FitOptions& o) {
  require(o.max_outer >= 1 && o.max_inner >= 1, ErrorCode::invalid_argument, "iteration limits must be positive");
  require(o.rel_tol >= 0.0 && o.abs_tol >= 0.0 && o.max_points > 0 && o.contour_threshold > 0.0,
          ErrorCode::invalid_argument, "bad fit options");
}

void check_joints(const FitProblem& p) {
  require(p.joints3d.empty() || p.joints3d.size() == std::size_t(kNumJoints), ErrorCode::dim_mismatch,
          "3D joint targets need one entry per joint");
  require(p.joints2d.empty() || p.joints2d.size() == std::size_t(kNumJoints), ErrorCode::dim_mismatch,
          "2D joint targets need one entry per joint");
  require(p.lambda >= 0.0 && p.lambda_j >= 0.0 && p.lambda_2d >= 0.0, ErrorCode::invalid_argument,
          "joint weights must be non-negative");
}

// Outer loop shared by all objectives: build targets, optimize, re-match.
template <typename Build>
FitResult run(const BodyTemplate& model, const BodyParams& init, std::vector<int> active, StepMode mode,
              const FitOptions& opts, Build&& build) {
  require(init.finite(), ErrorCode::non_finite, "initial parameters are not finite");
  FitResult out;
  Eigen::VectorXd x = init.flatten();
  Engine engine(model, std::move(active), mode, opts);
  Targets t = build(PosedBody(model, init));
  double e = t.objective(PosedBody(model, init), x);
  out.trace.push_back(e);
  out.trace_outer.push_back(0);
  // Re-matching can raise the objective; keep the best re-matched iterate.
  Eigen::VectorXd best_x = x;
  double best_e = e;
  Targets best_t = t;
  for (int outer = 1; outer <= opts.max_outer; ++outer) {
    engine.inner(x, t, out, outer - 1);
    const PosedBody body(model, BodyParams::unflatten(x));
    t = build(body);
    const double e_new = t.objective(body, x);
    out.trace.push_back(e_new);
    out.trace_outer.push_back(outer);
    out.outer_iterations = outer;
    const double drop = e - e_new;
    e = e_new;
    if (!std::isfinite(e)) break;
    if (e <= best_e) {
      best_x = x;
      best_e = e;
      best_t = t;
    }
    // A linear solve is exact for its match set, so it stops only once
    // re-matching changes nothing; the others stop on a small relative drop.
    const bool settled = mode == StepMode::linear ? drop == 0.0 : drop >= 0.0 && drop <= opts.rel_tol * (e + drop);
    if (e <= opts.abs_tol || settled) {
      out.converged = true;
      break;
    }
  }
  out.params = canonical(BodyParams::unflatten(best_x));
  out.residuals = best_t.breakdown(PosedBody(model, out.params), out.params.flatten());
  return out;
}

void add_joint_terms(Targets& t, std::span<const Vec3> joints, double weight) {
  if (weight <= 0.0) return;
  for (std::size_t j = 0; j < joints.size(); ++j)
    t.terms.push_back({TermKind::joints3d, true, int(j), Vec3::Constant(weight), joints[j]});
}

// Chamfer targets for both directions on fixed subsamples.
class ChamferBuilder {
 public:
  ChamferBuilder(const FitProblem& p, const BodyTemplate& model, const FitOptions& opts)
      : p_(p), model_(model) {
    require(!p.surface.empty(), ErrorCode::invalid_argument, "fit needs a nonempty surface");
    require(p.surface.confidence.size() == p.surface.vertices.size(), ErrorCode::dim_mismatch,
            "surface confidence must match its vertices");
    for (double c : p.surface.confidence)
      require(c > 0.0 && std::isfinite(c), ErrorCode::invalid_argument, "surface confidence must be positive");
    targets_ = subsample(p.surface.vertices.size(), opts.max_points, opts.seed);
    models_ = subsample(model.num_vertices(), opts.max_points, opts.seed + 1);
    target_scale_ = double(p.surface.vertices.size()) / double(targets_.size());
    model_scale_ = double(model.num_vertices()) / double(models_.size());
    tree_ = spatial::KdTree(p.surface.vertices, p.surface.confidence);
  }

  void add(Targets& t, const PosedBody& body) const {
    const auto& verts = body.vertices();
    const spatial::KdTree model_tree(verts);
    for (int i : targets_) {
      const auto hit = model_tree.nearest(p_.surface.vertices[std::size_t(i)]);
      t.terms.push_back({TermKind::forward, false, hit.index,
                         Vec3::Constant(target_scale_ * p_.surface.confidence[std::size_t(i)]),
                         p_.surface.vertices[std::size_t(i)]});
    }
    for (int v : models_) {
      const auto hit = tree_.nearest_weighted(verts[std::size_t(v)]);
      t.terms.push_back({TermKind::backward, false, v,
                         Vec3::Constant(model_scale_ * p_.surface.confidence[std::size_t(hit.index)]),
                         p_.surface.vertices[std::size_t(hit.index)]});
    }
  }

 private:
  const FitProblem& p_;
  const BodyTemplate& model_;
  std::vector<int> targets_, models_;
  double target_scale_ = 1.0, model_scale_ = 1.0;
  spatial::KdTree tree_;
};

}  // namespace

double contour_weight(double pixel_distance, double threshold) {
  require(threshold > 0.0, ErrorCode::invalid_argument, "contour threshold must be positive");
  return pixel_distance / threshold;
}

FitResult fit_chamfer(const FitProblem& problem, const BodyTemplate& model, const BodyParams& init, const FitOptions& opts) {
  check_options(opts);
  check_joints(problem);
  const ChamferBuilder chamfer(problem, model, opts);
  return run(model, init, all_params(), opts.solver == Solver::lm ? StepMode::lm : StepMode::dogleg, opts,
             [&](const PosedBody& body) {
               Targets t;
               chamfer.add(t, body);
               add_joint_terms(t, problem.joints3d, problem.lambda);
               t.fold(model.num_vertices());
               return t;
             });
}

FitResult fit_beta_only(const FitProblem& problem, const BodyTemplate& model, const BodyParams& pose,
                        const FitOptions& opts) {
  check_options(opts);
  check_joints(problem);
  BodyParams init = pose;
  init.beta.setZero();
  const bool has_surface = !problem.surface.empty();
  std::optional<ChamferBuilder> chamfer;
  if (has_surface) chamfer.emplace(problem, model, opts);
  require(has_surface || !problem.joints3d.empty(), ErrorCode::invalid_argument,
          "shape fit needs a surface or joint targets");
  return run(model, init, shape_and_translation(), StepMode::linear, opts, [&](const PosedBody& body) {
    Targets t;
    if (chamfer) chamfer->add(t, body);
    add_joint_terms(t, problem.joints3d, problem.lambda);
    t.fold(model.num_vertices());
    return t;
  });
}

FitResult fit_silhouette(const FitProblem& problem, const BodyTemplate& model, const BodyParams& init,
                        const FitOptions& opts) {
  check_options(opts);
  check_joints(problem);
  require(problem.joints2d.size() == std::size_t(kNumJoints), ErrorCode::invalid_argument,
          "silhouette fit needs 2D joints for the camera");
  require(problem.contour.empty() || (problem.image_cols > 0 && problem.image_rows > 0),
          ErrorCode::invalid_argument, "silhouette fit needs the image size");
  // The camera pairs the 2D joints with the 3D joint targets when present;
  // they share the network's frame. Otherwise the initial model joints.
  const PosedBody start(model, init);
  const Camera cam = init_camera(problem.joints3d.empty() ? std::span<const Vec3>(start.joints())
                                                          : std::span<const Vec3>(problem.joints3d),
                                 problem.joints2d);
  const double s2 = cam.scale * cam.scale;
  auto unproject = [&](const Vec2& px) {
    const Vec2 m = (px - cam.offset) / cam.scale;
    return Vec3(m.x(), m.y(), 0.0);
  };
  std::vector<Vec3> contour3;
  for (const auto& c : problem.contour) contour3.emplace_back(c.x(), c.y(), 0.0);
  const spatial::KdTree contour_tree(contour3);

  auto result = run(model, init, all_params(), opts.solver == Solver::lm ? StepMode::lm : StepMode::dogleg, opts,
                    [&](const PosedBody& body) {
                      Targets t;
                      if (!contour3.empty()) {
                        const auto sil = render_silhouette(body.vertices(), model, cam, problem.image_cols,
                                                           problem.image_rows);
                        std::vector<Vec3> projected;
                        projected.reserve(body.vertices().size());
                        for (const auto& p : body.vertices()) {
                          const Vec2 px = cam.project(p);
                          projected.emplace_back(px.x(), px.y(), 0.0);
                        }
                        const spatial::KdTree vertex_tree(projected);
                        std::vector<int> on_contour;
                        for (const auto& c : silhouette_contour(sil))
                          on_contour.push_back(vertex_tree.nearest(Vec3(c.x(), c.y(), 0.0)).index);
                        std::sort(on_contour.begin(), on_contour.end());
                        on_contour.erase(std::unique(on_contour.begin(), on_contour.end()), on_contour.end());
                        for (int v : on_contour) {
                          const auto hit = contour_tree.nearest(projected[std::size_t(v)]);
                          const double w = contour_weight(std::sqrt(hit.cost), opts.contour_threshold);
                          if (w <= 0.0) continue;
                          t.terms.push_back({TermKind::contour, false, v, Vec3(s2 * w, s2 * w, 0.0),
                                             unproject(problem.contour[std::size_t(hit.index)])});
                        }
                      }
                      if (problem.lambda_j > 0.0 && !problem.joints3d.empty())
                        add_joint_terms(t, problem.joints3d, s2 * problem.lambda_j);
                      if (problem.lambda_2d > 0.0) {
                        const double w = s2 * problem.lambda_2d;
                        for (int j = 0; j < kNumJoints; ++j)
                          t.terms.push_back({TermKind::joints2d, true, j, Vec3(w, w, 0.0),
                                             unproject(problem.joints2d[std::size_t(j)])});
                      }
                      t.shape_prior = problem.lambda_beta;
                      t.fold(model.num_vertices());
                      return t;
                    });
  result.camera = cam;
  return result;
}

}  // namespace bodyvox::fitkit
