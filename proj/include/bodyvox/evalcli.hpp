#pragma once

#include "bodyvox/common.hpp"
#include "bodyvox/fitkit.hpp"
#include "bodyvox/projection.hpp"
#include "bodyvox/voxcore.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bodyvox::evalcli {

// ---- Mesh metrics -------------------------------------------------------------

// Mean distance between index-matched vertices.
double surface_error(std::span<const Vec3> fit, std::span<const Vec3> gt);

// Mean distance over the listed vertex indices.
double landmark_error(std::span<const Vec3> fit, std::span<const Vec3> gt, std::span<const int> landmarks);

struct MeshPair {
  std::vector<Vec3> fit;
  std::vector<Vec3> gt;
};

// Per-vertex distance averaged over trials.
std::vector<double> per_vertex_error(std::span<const MeshPair> trials);

// OBJ with "v x y z r g b" vertex colors on a blue-to-red ramp over
// [0, max_mm] (max_mm <= 0: the largest error). The error in mm follows each
// vertex as a "# e <mm>" comment.
void write_error_map(const std::filesystem::path& path, const voxcore::TriMesh& mesh, std::span<const double> error,
                     double max_mm = 0.0);

// Symmetric mean nearest-neighbor distance between two point sets.
double point_set_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// ---- Extreme-shape subsets ----------------------------------------------------

// Samples at or above the nearest-rank (100 - p)th percentile of the
// distances: the n - ceil((100 - p)% * n) + 1 largest, ties by lower index,
// returned in ascending index order. Nested in p for a fixed list.
std::vector<std::size_t> build_subsets(std::span<const double> distances, double p);

// ---- Raw volumes --------------------------------------------------------------

// One JSON header line, then dims.w * dims.h * dims.d little-endian float32
// values with y fastest, then z, then x.
void write_raw_volume(std::ostream& out, const voxcore::ProbVolume& vol);
voxcore::ProbVolume read_raw_volume(std::istream& in);
void write_raw_volume(const std::filesystem::path& path, const voxcore::ProbVolume& vol);
voxcore::ProbVolume read_raw_volume(const std::filesystem::path& path);

// Reads .binvox as a probability volume, anything else as a raw volume.
voxcore::ProbVolume read_volume(const std::filesystem::path& path);

// ---- Metric report ------------------------------------------------------------

inline constexpr int kPartIouCount = voxcore::kNumPartClasses + 1;  // classes + combined foreground
inline constexpr std::array<const char*, kPartIouCount> kPartIouNames = {
    "background", "head", "torso", "left_arm", "right_arm", "left_leg", "right_leg", "foreground"};

struct MetricCounts {
  std::size_t voxels_pred = 0;
  std::size_t voxels_gt = 0;
  std::size_t vertices = 0;
  std::size_t landmarks = 0;
  std::size_t samples = 1;
};

struct MetricReport {
  double voxel_iou = 0.0;
  projection::SilhouetteScores front;
  projection::SilhouetteScores side;
  std::optional<double> surface_error_mm;   // after model fitting
  std::optional<double> landmark_error_mm;
  std::optional<double> raw_surface_mm;     // isosurface of the prediction vs the GT mesh
  std::optional<std::array<double, kPartIouCount>> part_iou;
  MetricCounts counts;
};

// Per-class IOU of two label volumes, then foreground (label > 0) combined.
// A class absent from both scores 1.
std::array<double, kPartIouCount> part_ious(const voxcore::ProbVolume& pred, const voxcore::ProbVolume& gt);

// Occupancy metrics of a predicted volume (prob or logit) against GT.
MetricReport volume_metrics(const voxcore::ProbVolume& pred, const voxcore::VoxelGrid& gt);

// Mean of every metric; order of `reports` does not affect the result.
MetricReport aggregate(std::span<const MetricReport> reports);

std::string report_to_json(const MetricReport& r);
MetricReport report_from_json(const std::string& text);

// ---- Configuration ------------------------------------------------------------

struct Config {
  struct {
    int resolution = 128;
    double fill_ratio = 0.95;
  } voxel;
  struct {
    int resolution = 64;
    double sigma = 1.0;
    int depth_bins = 19;
    double depth_range = 850.0;
    double sigma_bins = 0.75;
  } heatmap;
  struct {
    double lambda = 5.0;
    double lambda_j = 100.0;
    double lambda_2d = 1.0;
    double lambda_beta = 1.0;
    double contour_threshold = 10.0;
    int max_outer = 30;
    int max_inner = 10;
    double rel_tol = 1e-6;
    std::size_t max_points = 5000;
    std::string solver = "dogleg";
  } fit;
  struct {
    double lr = 1e-3;
    int batch = 6;
    int samples = 32;
    int held_out = 8;
    int voxel_res = 32;
    std::array<int, 5> iters{60, 60, 60, 60, 500};
    int balance_iters = 100;
    int stage_balance_iters = 20;
    std::string grad_measure = "mean_abs";
    int log_grad_every = 25;
  } train;
  struct {
    double root_depth_mm = 0.0;
    double mm_per_cell = 0.0;  // 0: take the scale from the volume header
    std::array<double, 2> percentiles{10, 20};
  } eval;
  std::uint64_t seed = 0;
  std::uint64_t template_seed = 1;
};

// JSON object with the sections above; absent keys keep their defaults,
// unknown keys are rejected.
Config config_from_json(const std::string& text);
Config load_config(const std::filesystem::path& path);
std::string config_to_json(const Config& c);

fitkit::FitOptions fit_options(const Config& c);

// ---- Command line -------------------------------------------------------------

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_not_converged = 3 };

// Runs one subcommand. argv[0] is the program name.
int run_cli(std::span<const std::string> argv, std::ostream& out, std::ostream& err);

}  // namespace bodyvox::evalcli
