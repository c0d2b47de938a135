#pragma once

#include "bodyvox/common.hpp"
#include "bodyvox/losskit.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bodyvox::gradnet {

// Dense row-major array of doubles.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  std::size_t size() const { return data.size(); }
  int dim(int i) const { return shape[std::size_t(i)]; }
  int rank() const { return int(shape.size()); }
};

std::size_t element_count(std::span<const int> shape);

struct Var {
  int id = -1;
};

// Records operations in creation order, which is a topological order, and
// replays their adjoints in reverse.
class Tape {
 public:
  Var constant(Tensor t);
  // A leaf whose gradient is kept after backward().
  Var leaf(Tensor t);

  const Tensor& value(Var v) const { return nodes_[std::size_t(v.id)].value; }
  const std::vector<double>& grad(Var v) const { return nodes_[std::size_t(v.id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1 (out must hold one element) and accumulates
  // gradients into every node that depends on a leaf. Clears previous
  // gradients first, so it may be called once per loss on the same graph.
  void backward(Var out);

  // Adjoint callback: reads the node's gradient and adds into its inputs'.
  using Adjoint = std::function<void(Tape&, int)>;
  Var record(Tensor value, std::vector<int> inputs, Adjoint adjoint);

  std::vector<double>& grad_mut(int id) { return nodes_[std::size_t(id)].grad; }
  const std::vector<double>& grad_of(int id) const { return nodes_[std::size_t(id)].grad; }
  const Tensor& value_of(int id) const { return nodes_[std::size_t(id)].value; }
  bool needs_grad(int id) const { return nodes_[std::size_t(id)].needs_grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<int> inputs;
    Adjoint adjoint;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// y = W x + b with x [n], W [m, n], b [m].
Var affine(Tape& t, Var x, Var w, Var b);
// Same-padded, stride-1 convolution. x [C, H, W], w [O, C, k, k], b [O]; k odd.
Var conv2d(Tape& t, Var x, Var w, Var b);
// x [C, D, H, W], w [O, C, k, k, k], b [O]; k odd.
Var conv3d(Tape& t, Var x, Var w, Var b);
Var sigmoid(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var relu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double s);
Var sum(Tape& t, Var x);
// Maximum along one axis; the gradient goes to the first maximal entry.
Var max_reduce(Tape& t, Var x, int axis);
// Non-overlapping k x k max over the last two axes of [C, H, W], same routing.
Var max_pool2d(Tape& t, Var x, int k);
// Concatenation along axis 0; trailing shapes must agree.
Var concat(Tape& t, std::span<const Var> parts);
// Nearest-neighbor repeat by `factor` along every axis after the first.
Var upsample(Tape& t, Var x, int factor);
Var reshape(Tape& t, Var x, std::vector<int> shape);

// Scalar losses. Values and gradients come from losskit.
Var mse(Tape& t, Var pred, std::span<const double> target);             // mean
Var softmax_ce(Tape& t, Var logits, std::span<const int> labels);       // [C, ...], summed
Var bce_logits(Tape& t, Var logits, std::span<const std::uint8_t> target);  // summed

// Named trainable tensors.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t count() const;  // total scalars
  int find(const std::string& name) const;  // -1 when absent
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

// f64le blob plus a JSON manifest (name, shape, offset per tensor).
void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& dir);

// ---- Toy multi-stage predictor ------------------------------------------

inline constexpr int kImage = 32;      // input resolution
inline constexpr int kHeat = 16;       // heatmap / segmentation resolution
inline constexpr int kJoints = 16;
inline constexpr int kDepthBins = 19;
inline constexpr int kSegClasses = 7;  // background + six parts
inline constexpr int kInputChannels = 3;

struct ToySample {
  Tensor input;                      // [3, 32, 32]: silhouette, part raster, noise
  std::vector<double> heat2d;        // [16, 16, 16] joint, row, col
  std::vector<int> segm;             // [16 * 16] class ids
  std::vector<double> heat3d;        // [16 * 19, 16, 16] (joint, bin), row, col
  int voxel_res = 32;                // R below
  std::vector<std::uint8_t> voxels;  // [R, R, R] z, y, x
  std::vector<std::uint8_t> front;   // [R, R] y, x
  std::vector<std::uint8_t> side;    // [R, R] z, y
};

struct ToyDataConfig {
  double pose_sigma = 0.3;   // rad per joint
  double shape_sigma = 1.0;  // per beta coefficient
  double input_noise = 0.1;  // std of the additive input noise
  int voxel_res = 32;        // 32 or 64
};

// Renders posed synthetic bodies into full supervision at toy resolution.
std::vector<ToySample> make_toy_set(int n, std::uint64_t seed, const ToyDataConfig& cfg = {});

// Which inputs feed the shape stage.
struct StageInputs {
  bool pose2d = true;
  bool segm = true;
  bool pose3d = true;
  bool image = true;
  bool any() const { return pose2d || segm || pose3d || image; }
};

enum class Stage { pose2d = 1, pose3d = 2, shape = 3, shape_reproj = 4, end_to_end = 5 };

struct ToyOutputs {
  Var heat2d, segm, heat3d, voxels;  // unset (-1) for stages not run
};

class ToyPredictor {
 public:
  explicit ToyPredictor(std::uint64_t seed, StageInputs shape_inputs = {}, int voxel_res = 32);

  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const StageInputs& shape_inputs() const { return inputs_; }
  int voxel_res() const { return res_; }

  // Parameters owned by each sub-network: 0 = 2D tasks, 1 = 3D pose, 2 = shape.
  int block_of(int param) const { return block_[std::size_t(param)]; }

  // With ground-truth fields on, the shape stage reads the sample's own 2D
  // pose, segmentation and 3D pose targets instead of the predictions.
  void set_ground_truth_fields(bool on) { gt_fields_ = on; }
  bool ground_truth_fields() const { return gt_fields_; }

  // Runs the sub-networks up to `upto` (1 = 2D only, 2 = +3D pose, 3 = all).
  // `leaves` receives one tape variable per parameter.
  ToyOutputs forward(Tape& t, const ToySample& s, std::vector<Var>& leaves, int upto = 3) const;

 private:
  ParamSet params_;
  std::vector<int> block_;
  StageInputs inputs_;
  int res_ = 32;
  bool gt_fields_ = false;
};

// ---- Training -------------------------------------------------------------

struct StageIters {
  int pose2d = 60, pose3d = 60, shape = 60, shape_reproj = 60, end_to_end = 500;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch = 6;
  std::uint64_t seed = 0;
  double rms_decay = 0.99;
  double rms_eps = 0.0;  // added to sqrt(mean square)
  StageIters iters;
  int balance_iters = 100;        // measurement batches before end-to-end
  int stage_balance_iters = 20;   // measurement batches before stages (i)-(iv)
  losskit::GradMagnitude measure = losskit::GradMagnitude::mean_abs;
  // Constant factor on each task loss, in losskit term order.
  std::array<double, losskit::kNumTerms> loss_scale{1, 1, 1, 1, 1, 1};
  int log_grad_every = 25;  // per-term gradient magnitudes in the log
  std::filesystem::path log_csv;  // empty: no file
};

struct LogRow {
  int stage = 0;
  int iteration = 0;  // within the stage
  std::array<double, losskit::kNumTerms> terms{};  // batch means, NaN when inactive
  double combined = 0.0;
  std::array<double, losskit::kNumTerms> grad_magnitude{};  // NaN when not measured
};

struct StageSummary {
  int stage = 0;
  losskit::LossWeights weights;   // zero for inactive terms
  std::vector<double> raw_weights;  // before normalization, active terms only
  std::array<double, losskit::kNumTerms> start{};  // full-set term means
  std::array<double, losskit::kNumTerms> end{};
  double start_combined = 0.0;
  double end_combined = 0.0;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::vector<StageSummary> stages;
  // Parameters after each end-to-end iteration (only when requested).
  std::vector<std::vector<double>> trajectory;
};

// Terms supervised in each stage.
std::vector<int> stage_terms(Stage s);

// Mean over samples of each task loss (scaled by cfg.loss_scale); NaN for
// terms outside `active`.
std::array<double, losskit::kNumTerms> evaluate_terms(const ToyPredictor& model, std::span<const ToySample> data,
                                                       std::span<const int> active, const TrainConfig& cfg);

// Stages (i)-(v). Throws Error(non_finite) naming the term that went NaN.
TrainLog train_staged(ToyPredictor& model, std::span<const ToySample> data, const TrainConfig& cfg,
                      bool keep_trajectory = false);

// Trains one stage on the given terms with fixed weights. Exposed for the
// balancing checks.
void train_stage(ToyPredictor& model, std::span<const ToySample> data, Stage stage, const losskit::LossWeights& w,
                 int iters, const TrainConfig& cfg, TrainLog& log, bool keep_trajectory = false);

// Per-term gradient magnitudes averaged over `batches` batches at fixed
// parameters, and the weights derived from them. No parameters change.
losskit::BalanceResult measure_balance(const ToyPredictor& model, std::span<const ToySample> data, Stage stage,
                                       int batches, const TrainConfig& cfg);

void write_log_csv(const std::filesystem::path& path, const TrainLog& log);

// Fraction of voxels with sigmoid(logit) >= 0.5 agreeing, as intersection over union.
double voxel_iou(std::span<const double> logits, std::span<const std::uint8_t> target);

struct AblationVariant {
  std::string name;
  StageInputs inputs;
  bool ground_truth_fields = false;  // feed GT 2D/3D pose and segmentation
};

struct AblationRow {
  std::string name;
  bool pose2d = false, segm = false, pose3d = false, image = false;
  double iou = 0.0;  // held-out voxel IOU
};

// Trains the 2D/3D pose stages once, then one shape stage per variant on
// `train`, and reports voxel IOU on `held_out`.
std::vector<AblationRow> ablate_inputs(std::span<const AblationVariant> variants, std::span<const ToySample> train,
                                       std::span<const ToySample> held_out, const TrainConfig& cfg);

}  // namespace bodyvox::gradnet
