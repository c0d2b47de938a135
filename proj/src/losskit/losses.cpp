#include "bodyvox/losskit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bodyvox::losskit {

using projection::Silhouette;
using projection::View;
using voxcore::GridDims;
using voxcore::ProbVolume;
using voxcore::Space;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// BCE of a logit against target s, and its derivative.
std::pair<double, double> bce_logit(double logit, double s) {
  return {softplus(logit) - s * logit, sigmoid(logit) - s};
}

std::pair<double, double> bce_prob(double p, double s, double eps) {
  const double pc = std::clamp(p, eps, 1.0 - eps);
  const double value = -(s * std::log(pc) + (1.0 - s) * std::log(1.0 - pc));
  const double d = (p > eps && p < 1.0 - eps) ? -s / pc + (1.0 - s) / (1.0 - pc) : 0.0;
  return {value, d};
}

// Visits every ray of a view: `fn(pixel_col, pixel_row, index_of(k), length)`
// where index_of maps the position along the ray to a flat volume index.
template <typename Fn>
void for_each_ray(const GridDims& dims, View view, Fn fn) {
  if (view == View::front) {
    for (int y = 0; y < dims.h; ++y)
      for (int x = 0; x < dims.w; ++x)
        fn(x, y, [&, x, y](int k) { return dims.index(x, y, k); }, dims.d);
  } else {
    for (int z = 0; z < dims.d; ++z)
      for (int y = 0; y < dims.h; ++y)
        fn(y, z, [&, y, z](int k) { return dims.index(k, y, z); }, dims.w);
  }
}

// Flat index of the first extreme value along a ray.
template <typename Index, typename Better>
std::size_t ray_extreme(const std::vector<double>& data, Index index_of, int length, Better better) {
  std::size_t best = index_of(0);
  for (int k = 1; k < length; ++k) {
    const std::size_t i = index_of(k);
    if (better(data[i], data[best])) best = i;
  }
  return best;
}

void check_target(const GridDims& dims, const Silhouette& target, View view) {
  const auto [cols, rows] = projection::view_shape(dims, view);
  require(target.cols == cols && target.rows == rows && target.size() == std::size_t(cols) * rows,
          ErrorCode::dim_mismatch, "reprojection: silhouette dims do not match the volume view");
}

}  // namespace

LossValue voxel_bce(std::span<const double> logits, std::span<const std::uint8_t> target) {
  require(logits.size() == target.size(), ErrorCode::dim_mismatch, "voxel_bce: size mismatch");
  LossValue out;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto [v, d] = bce_logit(logits[i], target[i] ? 1.0 : 0.0);
    out.value += v;
    out.grad[i] = d;
  }
  return out;
}

LossValue voxel_bce(const ProbVolume& logits, const voxcore::VoxelGrid& target) {
  require(logits.dims == target.dims, ErrorCode::dim_mismatch, "voxel_bce: dims differ");
  require(logits.space == Space::logit, ErrorCode::invalid_argument, "voxel_bce: expects logits");
  return voxel_bce(logits.data, target.data);
}

LossValue softmax_ce(std::span<const double> logits, std::span<const int> labels, int classes) {
  require(classes >= 2, ErrorCode::invalid_argument, "softmax_ce: need at least two classes");
  const std::size_t n = labels.size();
  require(logits.size() == n * std::size_t(classes), ErrorCode::dim_mismatch,
          "softmax_ce: logits size != classes * labels");
  LossValue out;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int t = labels[i];
    require(t >= 0 && t < classes, ErrorCode::invalid_argument, "softmax_ce: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) mx = std::max(mx, logits[std::size_t(c) * n + i]);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(logits[std::size_t(c) * n + i] - mx);
    const double lse = mx + std::log(z);
    out.value += lse - logits[std::size_t(t) * n + i];
    for (int c = 0; c < classes; ++c) {
      const std::size_t k = std::size_t(c) * n + i;
      out.grad[k] = std::exp(logits[k] - lse) - (c == t ? 1.0 : 0.0);
    }
  }
  return out;
}

LossValue part_ce_3d(std::span<const double> logits, const ProbVolume& target) {
  require(target.space == Space::label, ErrorCode::invalid_argument, "part_ce_3d: target must be labels");
  std::vector<int> labels(target.data.size());
  std::transform(target.data.begin(), target.data.end(), labels.begin(),
                 [](double v) { return int(v); });
  return softmax_ce(logits, labels, voxcore::kNumPartClasses);
}

LossValue segm_ce_2d(std::span<const double> logits, std::span<const int> labels, int classes) {
  return softmax_ce(logits, labels, classes);
}

LossValue heatmap_mse(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && !pred.empty(), ErrorCode::dim_mismatch,
          "heatmap_mse: size mismatch or empty input");
  LossValue out;
  out.grad.resize(pred.size());
  const double n = double(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value /= n;
  return out;
}

LossValue reprojection_bce(const ProbVolume& volume, const Silhouette& target, View view, double eps) {
  require(volume.space != Space::label, ErrorCode::invalid_argument,
          "reprojection_bce: label-space volume");
  require(volume.data.size() == volume.dims.count(), ErrorCode::dim_mismatch,
          "reprojection_bce: data length != W*H*D");
  check_target(volume.dims, target, view);
  const bool logit = volume.space == Space::logit;
  LossValue out;
  out.grad.assign(volume.data.size(), 0.0);
  for_each_ray(volume.dims, view, [&](int c, int r, auto index_of, int length) {
    const std::size_t arg =
        ray_extreme(volume.data, index_of, length, [](double a, double b) { return a > b; });
    const double s = target.at(c, r);
    const auto [v, d] = logit ? bce_logit(volume.data[arg], s) : bce_prob(volume.data[arg], s, eps);
    out.value += v;
    out.grad[arg] += d;
  });
  return out;
}

LossValue part_reprojection_bce(std::span<const ProbVolume> channels, std::span<const Silhouette> targets,
                                View view, double eps) {
  require(channels.size() == std::size_t(voxcore::kNumPartClasses) && targets.size() == channels.size(),
          ErrorCode::dim_mismatch, "part_reprojection_bce: expected 7 channels and 7 targets");
  const std::size_t n = channels[0].dims.count();
  LossValue out;
  out.grad.assign(channels.size() * n, 0.0);
  for (std::size_t ch = 0; ch < channels.size(); ++ch) {
    const ProbVolume& vol = channels[ch];
    require(vol.dims == channels[0].dims && vol.space == Space::prob && vol.data.size() == n,
            ErrorCode::dim_mismatch, "part_reprojection_bce: channels must share dims and be probabilities");
    check_target(vol.dims, targets[ch], view);
    const bool background = ch == 0;
    for_each_ray(vol.dims, view, [&](int c, int r, auto index_of, int length) {
      const std::size_t arg = ray_extreme(vol.data, index_of, length, [background](double a, double b) {
        return background ? a < b : a > b;
      });
      const auto [v, d] = bce_prob(vol.data[arg], targets[ch].at(c, r), eps);
      out.value += v;
      out.grad[ch * n + arg] += d;
    });
  }
  return out;
}

}  // namespace bodyvox::losskit
