#pragma once

#include "bodyvox/common.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace bodyvox::heatfields {

inline constexpr int kNumJoints = 16;
inline constexpr int kDefaultRoot = 6;  // pelvis

// Joint positions in heatmap cells (2D, z unused) or millimeters (3D).
struct Skeleton {
  std::vector<Vec3> joints;
  int root = kDefaultRoot;
  // Set per joint by the decoders when the channel carries no signal.
  std::vector<std::uint8_t> low_confidence;

  std::size_t size() const { return joints.size(); }
  void validate() const;
};

struct HeatmapConfig {
  int resolution = 64;
  double sigma = 1.0;          // cells
  int depth_bins = 19;
  double depth_range = 850.0;  // mm
  double sigma_bins = 0.75;    // depth bins
};

// Maps millimeter xy to heatmap cells: the cell at (R/2, R/2) sits at
// `center_mm`, and one cell spans `mm_per_cell`.
struct HeatmapFrame {
  double mm_per_cell = 1.0;
  Vec2 center_mm = Vec2::Zero();
};

class DepthQuantizer {
 public:
  DepthQuantizer(double range_mm = 850.0, int bins = 19);

  double range() const { return range_; }
  int bins() const { return bins_; }
  double bin_width() const { return range_ / double(bins_); }
  // Continuous bin coordinate of a depth; the root lands on (bins - 1) / 2.
  double bin_of(double depth, double root_depth) const;
  double depth_of(double bin, double root_depth) const;

 private:
  double range_;
  int bins_;
};

// Channel j, row y, column x at data[(j * R + y) * R + x]. Cell centers sit at
// integer coordinates.
struct JointHeatmap2D {
  int joints = 0;
  int resolution = 0;
  double sigma = 1.0;
  std::vector<double> data;

  double at(int j, int x, int y) const {
    return data[(std::size_t(j) * std::size_t(resolution) + std::size_t(y)) * std::size_t(resolution) +
                std::size_t(x)];
  }
};

// Channel j, bin b, row y, column x at data[((j * B + b) * R + y) * R + x].
struct JointHeatmap3D {
  int joints = 0;
  int resolution = 0;
  int bins = 0;
  double sigma = 1.0;
  double sigma_bins = 0.75;
  std::optional<HeatmapFrame> frame;
  std::vector<std::uint8_t> clipped;  // per joint, depth fell outside the range

  std::vector<double> data;

  double at(int j, int x, int y, int b) const {
    const auto r = std::size_t(resolution);
    return data[((std::size_t(j) * std::size_t(bins) + std::size_t(b)) * r + std::size_t(y)) * r +
                std::size_t(x)];
  }
};

JointHeatmap2D encode_2d(const Skeleton& skel, int resolution = 64, double sigma = 1.0);
Skeleton decode_2d(const JointHeatmap2D& hm);

// Joints in millimeters; the root's xy maps to the heatmap center unless a
// frame is given. The frame defaults to one cell per `depth_range / R` mm.
JointHeatmap3D encode_3d(const Skeleton& skel, const DepthQuantizer& q, const HeatmapConfig& cfg,
                         std::optional<HeatmapFrame> frame = std::nullopt);
// Throws when the heatmap has no frame to convert cells to millimeters.
Skeleton decode_3d(const JointHeatmap3D& hm, const DepthQuantizer& q, double root_depth);

}  // namespace bodyvox::heatfields
