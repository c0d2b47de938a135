#include "bodyvox/heatfields.hpp"

#include <algorithm>
#include <cmath>

namespace bodyvox::heatfields {

void Skeleton::validate() const {
  require(!joints.empty(), ErrorCode::invalid_argument, "skeleton has no joints");
  require(root >= 0 && std::size_t(root) < joints.size(), ErrorCode::invalid_argument,
          "skeleton root index out of range");
  for (const auto& j : joints) {
    require(j.allFinite(), ErrorCode::non_finite, "skeleton joint is not finite");
  }
}

DepthQuantizer::DepthQuantizer(double range_mm, int bins) : range_(range_mm), bins_(bins) {
  require(range_ > 0.0 && bins_ >= 1, ErrorCode::invalid_argument,
          "depth quantizer needs range > 0 and bins >= 1");
}

double DepthQuantizer::bin_of(double depth, double root_depth) const {
  return (depth - root_depth) / bin_width() + 0.5 * double(bins_ - 1);
}

double DepthQuantizer::depth_of(double bin, double root_depth) const {
  return root_depth + (bin - 0.5 * double(bins_ - 1)) * bin_width();
}

namespace {

// exp(-(i - c)^2 / (2 s^2)) for i in [0, n).
std::vector<double> gauss_1d(int n, double c, double s) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double d = double(i) - c;
    g[std::size_t(i)] = std::exp(-d * d / (2.0 * s * s));
  }
  return g;
}

// Index of the first maximum, or -1 when every value is <= 0.
std::ptrdiff_t first_max(const double* begin, const double* end) {
  const double* best = std::max_element(begin, end);
  return *best > 0.0 ? best - begin : -1;
}

}  // namespace

JointHeatmap2D encode_2d(const Skeleton& skel, int resolution, double sigma) {
  skel.validate();
  require(resolution > 0 && sigma > 0.0, ErrorCode::invalid_argument,
          "encode_2d: resolution and sigma must be positive");
  JointHeatmap2D hm;
  hm.joints = int(skel.size());
  hm.resolution = resolution;
  hm.sigma = sigma;
  const auto r = std::size_t(resolution);
  hm.data.assign(skel.size() * r * r, 0.0);
  for (std::size_t j = 0; j < skel.size(); ++j) {
    const auto gx = gauss_1d(resolution, skel.joints[j].x(), sigma);
    const auto gy = gauss_1d(resolution, skel.joints[j].y(), sigma);
    double* ch = hm.data.data() + j * r * r;
    for (std::size_t y = 0; y < r; ++y) {
      for (std::size_t x = 0; x < r; ++x) ch[y * r + x] = gy[y] * gx[x];
    }
  }
  return hm;
}

Skeleton decode_2d(const JointHeatmap2D& hm) {
  const auto r = std::size_t(hm.resolution);
  require(hm.data.size() == std::size_t(hm.joints) * r * r, ErrorCode::dim_mismatch,
          "decode_2d: data length mismatch");
  Skeleton s;
  s.root = std::min(kDefaultRoot, hm.joints - 1);
  s.joints.resize(std::size_t(hm.joints), Vec3::Zero());
  s.low_confidence.assign(std::size_t(hm.joints), 0);
  for (std::size_t j = 0; j < std::size_t(hm.joints); ++j) {
    const double* ch = hm.data.data() + j * r * r;
    const std::ptrdiff_t i = first_max(ch, ch + r * r);
    if (i < 0) {
      s.low_confidence[j] = 1;
      continue;
    }
    s.joints[j] = Vec3(double(std::size_t(i) % r), double(std::size_t(i) / r), 0.0);
  }
  return s;
}

JointHeatmap3D encode_3d(const Skeleton& skel, const DepthQuantizer& q, const HeatmapConfig& cfg,
                         std::optional<HeatmapFrame> frame) {
  skel.validate();
  require(cfg.resolution > 0 && cfg.sigma > 0.0 && cfg.sigma_bins > 0.0,
          ErrorCode::invalid_argument, "encode_3d: bad heatmap config");
  const Vec3& root = skel.joints[std::size_t(skel.root)];
  if (!frame) {
    frame = HeatmapFrame{q.range() / double(cfg.resolution), Vec2(root.x(), root.y())};
  }
  require(frame->mm_per_cell > 0.0, ErrorCode::invalid_argument, "encode_3d: mm_per_cell <= 0");

  JointHeatmap3D hm;
  hm.joints = int(skel.size());
  hm.resolution = cfg.resolution;
  hm.bins = q.bins();
  hm.sigma = cfg.sigma;
  hm.sigma_bins = cfg.sigma_bins;
  hm.frame = frame;
  hm.clipped.assign(skel.size(), 0);
  const auto r = std::size_t(cfg.resolution);
  const auto nb = std::size_t(q.bins());
  hm.data.assign(skel.size() * nb * r * r, 0.0);
  const double half = 0.5 * double(cfg.resolution);
  for (std::size_t j = 0; j < skel.size(); ++j) {
    const Vec3& p = skel.joints[j];
    const double cx = (p.x() - frame->center_mm.x()) / frame->mm_per_cell + half;
    const double cy = (p.y() - frame->center_mm.y()) / frame->mm_per_cell + half;
    const double raw_bin = q.bin_of(p.z(), root.z());
    const double bin = std::clamp(raw_bin, 0.0, double(q.bins() - 1));
    hm.clipped[j] = bin != raw_bin;
    const auto gx = gauss_1d(cfg.resolution, cx, cfg.sigma);
    const auto gy = gauss_1d(cfg.resolution, cy, cfg.sigma);
    const auto gb = gauss_1d(q.bins(), bin, cfg.sigma_bins);
    double* ch = hm.data.data() + j * nb * r * r;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) ch[(b * r + y) * r + x] = gb[b] * gy[y] * gx[x];
      }
    }
  }
  return hm;
}

Skeleton decode_3d(const JointHeatmap3D& hm, const DepthQuantizer& q, double root_depth) {
  require(hm.frame.has_value(), ErrorCode::invalid_argument,
          "decode_3d: heatmap has no cell-to-millimeter frame");
  require(hm.bins == q.bins(), ErrorCode::dim_mismatch, "decode_3d: bin count differs from quantizer");
  const auto r = std::size_t(hm.resolution);
  const auto nb = std::size_t(hm.bins);
  require(hm.data.size() == std::size_t(hm.joints) * nb * r * r, ErrorCode::dim_mismatch,
          "decode_3d: data length mismatch");
  const double half = 0.5 * double(hm.resolution);
  Skeleton s;
  s.root = std::min(kDefaultRoot, hm.joints - 1);
  s.joints.resize(std::size_t(hm.joints), Vec3::Zero());
  s.low_confidence.assign(std::size_t(hm.joints), 0);
  for (std::size_t j = 0; j < std::size_t(hm.joints); ++j) {
    const double* ch = hm.data.data() + j * nb * r * r;
    const std::ptrdiff_t i = first_max(ch, ch + nb * r * r);
    if (i < 0) {
      s.low_confidence[j] = 1;
      s.joints[j] = Vec3(hm.frame->center_mm.x(), hm.frame->center_mm.y(), root_depth);
      continue;
    }
    const std::size_t x = std::size_t(i) % r;
    const std::size_t y = (std::size_t(i) / r) % r;
    const std::size_t b = std::size_t(i) / (r * r);
    s.joints[j] = Vec3((double(x) - half) * hm.frame->mm_per_cell + hm.frame->center_mm.x(),
                       (double(y) - half) * hm.frame->mm_per_cell + hm.frame->center_mm.y(),
                       q.depth_of(double(b), root_depth));
  }
  return s;
}

}  // namespace bodyvox::heatfields
