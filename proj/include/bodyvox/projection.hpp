#pragma once

#include "bodyvox/voxcore.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace bodyvox::projection {

// FV looks along z (image axes x, y); SV looks along x (image axes y, z).
enum class View { front, side };

const char* to_string(View v);

// 2D image with `cols` samples along the first image axis and `rows` along the
// second; data[row * cols + col].
struct Silhouette {
  int cols = 0;
  int rows = 0;
  View view = View::front;
  std::vector<double> data;

  Silhouette() = default;
  Silhouette(int cols_, int rows_, View view_, double fill = 0.0)
      : cols(cols_), rows(rows_), view(view_), data(std::size_t(cols_) * std::size_t(rows_), fill) {}

  std::size_t size() const { return data.size(); }
  double at(int c, int r) const { return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }
  double& at(int c, int r) { return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }
};

// Image dimensions a view produces for a grid.
std::array<int, 2> view_shape(const voxcore::GridDims& dims, View view);

// Max along the view axis. Rejects label-space volumes.
Silhouette project(const voxcore::ProbVolume& vol, View view);
Silhouette project(const voxcore::VoxelGrid& grid, View view);

// Seven class channels (background first): parts use max, background uses min.
std::vector<Silhouette> project_parts(std::span<const voxcore::ProbVolume> channels, View view);

// Splits a label-space volume into one-hot probability channels.
std::vector<voxcore::ProbVolume> one_hot(const voxcore::ProbVolume& labels,
                                         int classes = voxcore::kNumPartClasses);

Silhouette gt_side_silhouette(const voxcore::VoxelGrid& grid);

struct SilhouetteScores {
  double iou = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

// Both inputs are binarized at 0.5 (value >= 0.5 is foreground). IOU and F1 are
// 1 when neither image has foreground.
SilhouetteScores silhouette_metrics(const Silhouette& pred, const Silhouette& gt);

// Scanline rasterization of a grid-space mesh with pixel centers at
// (i + 0.5, j + 0.5) and a top-left edge rule, so pixels on an edge shared by
// two triangles are covered exactly once. Triangles seen edge-on cover nothing.
Silhouette rasterize_silhouette(const voxcore::TriMesh& grid_mesh, const voxcore::GridDims& dims,
                                View view);

// Binary P5, 255 = foreground (>= 0.5). The second image axis points up.
void write_pgm(const std::filesystem::path& path, const Silhouette& s);

}  // namespace bodyvox::projection
