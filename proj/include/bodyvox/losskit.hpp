#pragma once

#include "bodyvox/projection.hpp"
#include "bodyvox/voxcore.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bodyvox::losskit {

// A scalar loss and its gradient with respect to the input it was given.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

// Sum over cells of the binary cross-entropy between sigmoid(logit) and the
// binary target. Gradient is sigmoid(logit) - target.
LossValue voxel_bce(std::span<const double> logits, std::span<const std::uint8_t> target);
LossValue voxel_bce(const voxcore::ProbVolume& logits, const voxcore::VoxelGrid& target);

// Softmax cross-entropy summed over elements. `logits` is channel-major:
// logits[c * n + i] for class c at element i; `labels` holds n class ids.
LossValue softmax_ce(std::span<const double> logits, std::span<const int> labels, int classes);

// 7-class cross-entropy over a label-space target volume; one logit volume per
// class, background first.
LossValue part_ce_3d(std::span<const double> logits, const voxcore::ProbVolume& target);

// 2D segmentation cross-entropy; 15 classes unless stated otherwise.
LossValue segm_ce_2d(std::span<const double> logits, std::span<const int> labels, int classes = 15);

// Mean over all elements of the squared difference; gradient 2(p - t)/N.
LossValue heatmap_mse(std::span<const double> pred, std::span<const double> target);

// Binary cross-entropy between the max projection of a volume and a target
// silhouette, summed over pixels. The gradient (same size as the volume) is
// routed to each ray's argmax voxel, ties to the smallest index along the ray.
// Logit volumes use the stable form on the max logit; probability volumes are
// clamped to [eps, 1 - eps] inside the logarithms.
LossValue reprojection_bce(const voxcore::ProbVolume& volume, const projection::Silhouette& target,
                           projection::View view, double eps = 1e-12);

// Per-class probability channels against per-class target silhouettes
// (background first): parts project with max, background with min. Returns
// one gradient block per channel, concatenated channel-major.
LossValue part_reprojection_bce(std::span<const voxcore::ProbVolume> channels,
                                std::span<const projection::Silhouette> targets,
                                projection::View view, double eps = 1e-12);

// Order of the six terms everywhere below.
enum Term : int { j2d = 0, segm = 1, j3d = 2, voxel = 3, fv = 4, sv = 5 };
inline constexpr int kNumTerms = 6;
inline constexpr std::array<const char*, kNumTerms> kTermNames = {"j2d", "segm", "j3d",
                                                                  "voxel", "fv", "sv"};

struct LossWeights {
  std::array<double, kNumTerms> w{1, 1, 1, 1, 1, 1};

  double& operator[](int t) { return w[std::size_t(t)]; }
  double operator[](int t) const { return w[std::size_t(t)]; }
  double sum() const;
  // Scaled to sum to one. Throws when all weights are zero or any is negative.
  LossWeights normalized() const;
  static LossWeights from_proportions(const std::array<double, kNumTerms>& p);

  // `lambda_<term> = value` lines.
  std::string to_kv() const;
  static LossWeights from_kv(const std::string& text);
};

struct LossReport {
  std::array<double, kNumTerms> terms{};
  double combined = 0.0;
  std::array<double, kNumTerms> grad_magnitude{};
};

LossReport combined(const std::array<double, kNumTerms>& terms, const LossWeights& w);

// Appends `iteration,j2d,segm,j3d,voxel,fv,sv,combined`; writes the header
// when the file is new or empty.
void append_csv(const std::filesystem::path& path, int iteration, const LossReport& report);

enum class GradMagnitude { mean_abs, rms, l2norm };
const char* to_string(GradMagnitude m);
GradMagnitude parse_grad_magnitude(const std::string& s);
double grad_magnitude(std::span<const double> g, GradMagnitude m = GradMagnitude::mean_abs);

// A predictor trained on several losses at once.
class MultiLossModel {
 public:
  virtual ~MultiLossModel() = default;
  virtual int num_losses() const = 0;
  // Parameter gradient of every loss on the next batch, one vector per loss.
  virtual std::vector<std::vector<double>> loss_gradients() = 0;
  // One optimizer step on the weighted sum of the given gradients.
  virtual void step(std::span<const double> weights,
                    const std::vector<std::vector<double>>& grads) = 0;
};

struct BalanceResult {
  std::vector<double> mean_magnitude;  // per loss, averaged over iterations
  std::vector<double> raw;             // 1 / mean_magnitude
  std::vector<double> weights;         // raw, normalized to sum 1
};

// Trains `iters` steps with equal weights while recording per-loss gradient
// magnitudes; weights are inversely proportional to their means. Throws
// Error(unbalanced) if a loss never produces a gradient.
BalanceResult balance_weights(MultiLossModel& model, int iters = 100,
                              GradMagnitude measure = GradMagnitude::mean_abs);

}  // namespace bodyvox::losskit
