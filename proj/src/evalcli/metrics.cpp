#include "bodyvox/evalcli.hpp"
#include "bodyvox/spatial.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace bodyvox::evalcli {

namespace {

// Sum after sorting, so the result does not depend on input order.
double order_free_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

double surface_error(std::span<const Vec3> fit, std::span<const Vec3> gt) {
  require(fit.size() == gt.size(), ErrorCode::dim_mismatch, "surface_error: vertex counts differ");
  require(!fit.empty(), ErrorCode::invalid_argument, "surface_error: no vertices");
  double s = 0.0;
  for (std::size_t i = 0; i < fit.size(); ++i) s += (fit[i] - gt[i]).norm();
  return s / double(fit.size());
}

double landmark_error(std::span<const Vec3> fit, std::span<const Vec3> gt, std::span<const int> landmarks) {
  require(fit.size() == gt.size(), ErrorCode::dim_mismatch, "landmark_error: vertex counts differ");
  require(!landmarks.empty(), ErrorCode::invalid_argument, "landmark_error: no landmarks");
  double s = 0.0;
  for (int v : landmarks) {
    require(v >= 0 && std::size_t(v) < fit.size(), ErrorCode::invalid_argument, "landmark index out of range");
    s += (fit[std::size_t(v)] - gt[std::size_t(v)]).norm();
  }
  return s / double(landmarks.size());
}

std::vector<double> per_vertex_error(std::span<const MeshPair> trials) {
  require(!trials.empty(), ErrorCode::invalid_argument, "per_vertex_error: no trials");
  const std::size_t n = trials[0].gt.size();
  std::vector<double> err(n, 0.0);
  for (const auto& t : trials) {
    require(t.fit.size() == n && t.gt.size() == n, ErrorCode::dim_mismatch, "per_vertex_error: vertex counts differ");
    for (std::size_t i = 0; i < n; ++i) err[i] += (t.fit[i] - t.gt[i]).norm();
  }
  for (auto& e : err) e /= double(trials.size());
  return err;
}

void write_error_map(const std::filesystem::path& path, const voxcore::TriMesh& mesh, std::span<const double> error,
                     double max_mm) {
  require(error.size() == mesh.vertices.size(), ErrorCode::dim_mismatch, "error map: one value per vertex expected");
  if (max_mm <= 0.0) max_mm = error.empty() ? 1.0 : *std::max_element(error.begin(), error.end());
  if (max_mm <= 0.0) max_mm = 1.0;
  std::ofstream out(path);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  out << "# per-vertex error, color range 0.." << max_mm << " mm\n" << std::setprecision(9);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const double t = std::clamp(error[i] / max_mm, 0.0, 1.0);
    const Vec3& v = mesh.vertices[i];
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << t << ' ' << 1.0 - std::abs(2.0 * t - 1.0) << ' '
        << 1.0 - t << "\n# e " << error[i] << '\n';
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  require(bool(out), ErrorCode::io, "write failed: " + path.string());
}

double point_set_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "point_set_distance: empty set");
  const spatial::KdTree ta(a), tb(b);
  double sa = 0.0, sb = 0.0;
  for (const auto& p : a) sa += std::sqrt(tb.nearest(p).cost);
  for (const auto& p : b) sb += std::sqrt(ta.nearest(p).cost);
  return 0.5 * (sa / double(a.size()) + sb / double(b.size()));
}

std::vector<std::size_t> build_subsets(std::span<const double> distances, double p) {
  require(p > 0.0 && p <= 100.0, ErrorCode::invalid_argument, "percentile must lie in (0, 100]");
  for (double d : distances) require(std::isfinite(d), ErrorCode::non_finite, "subset distances must be finite");
  // Nearest-rank (100 - p)th percentile; everything from that rank up is kept.
  const auto n = distances.size();
  const auto rank = std::max<std::size_t>(1, std::size_t(std::ceil((100.0 - p) * double(n) / 100.0)));
  const std::size_t k = n == 0 ? 0 : n - rank + 1;
  std::vector<std::size_t> idx(distances.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return distances[a] > distances[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::array<double, kPartIouCount> part_ious(const voxcore::ProbVolume& pred, const voxcore::ProbVolume& gt) {
  require(pred.dims == gt.dims, ErrorCode::dim_mismatch, "part_ious: dims differ");
  require(pred.space == voxcore::Space::label && gt.space == voxcore::Space::label, ErrorCode::invalid_argument,
          "part_ious: label volumes expected");
  std::array<std::size_t, kPartIouCount> inter{}, uni{};
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const int a = int(pred.data[i]), b = int(gt.data[i]);
    require(a >= 0 && a < voxcore::kNumPartClasses && b >= 0 && b < voxcore::kNumPartClasses,
            ErrorCode::malformed_payload, "part label out of range");
    if (a == b) {
      ++inter[std::size_t(a)];
      ++uni[std::size_t(a)];
    } else {
      ++uni[std::size_t(a)];
      ++uni[std::size_t(b)];
    }
    const bool fa = a > 0, fb = b > 0;
    inter.back() += fa && fb;
    uni.back() += fa || fb;
  }
  std::array<double, kPartIouCount> out{};
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = uni[c] == 0 ? 1.0 : double(inter[c]) / double(uni[c]);
  return out;
}

MetricReport volume_metrics(const voxcore::ProbVolume& pred, const voxcore::VoxelGrid& gt) {
  require(pred.dims == gt.dims, ErrorCode::dim_mismatch, "volume_metrics: dims differ");
  const auto grid = pred.threshold(pred.space == voxcore::Space::logit ? 0.0 : 0.5);
  MetricReport r;
  r.voxel_iou = voxcore::voxel_iou(grid, gt);
  r.front = projection::silhouette_metrics(projection::project(grid, projection::View::front),
                                           projection::project(gt, projection::View::front));
  r.side = projection::silhouette_metrics(projection::project(grid, projection::View::side),
                                          projection::project(gt, projection::View::side));
  r.counts.voxels_pred = std::size_t(std::count(grid.data.begin(), grid.data.end(), 1));
  r.counts.voxels_gt = std::size_t(std::count(gt.data.begin(), gt.data.end(), 1));
  return r;
}

MetricReport aggregate(std::span<const MetricReport> reports) {
  require(!reports.empty(), ErrorCode::invalid_argument, "aggregate: no reports");
  auto mean = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(get(r));
    return order_free_mean(std::move(v));
  };
  // Optional metrics are averaged over the reports that have them.
  auto mean_opt = [&](auto get) -> std::optional<double> {
    std::vector<double> v;
    for (const auto& r : reports)
      if (const auto x = get(r)) v.push_back(*x);
    if (v.empty()) return std::nullopt;
    return order_free_mean(std::move(v));
  };
  MetricReport out;
  out.voxel_iou = mean([](const MetricReport& r) { return r.voxel_iou; });
  out.front.iou = mean([](const MetricReport& r) { return r.front.iou; });
  out.front.f1 = mean([](const MetricReport& r) { return r.front.f1; });
  out.front.accuracy = mean([](const MetricReport& r) { return r.front.accuracy; });
  out.side.iou = mean([](const MetricReport& r) { return r.side.iou; });
  out.side.f1 = mean([](const MetricReport& r) { return r.side.f1; });
  out.side.accuracy = mean([](const MetricReport& r) { return r.side.accuracy; });
  out.surface_error_mm = mean_opt([](const MetricReport& r) { return r.surface_error_mm; });
  out.landmark_error_mm = mean_opt([](const MetricReport& r) { return r.landmark_error_mm; });
  out.raw_surface_mm = mean_opt([](const MetricReport& r) { return r.raw_surface_mm; });
  if (std::any_of(reports.begin(), reports.end(), [](const MetricReport& r) { return r.part_iou.has_value(); })) {
    std::array<double, kPartIouCount> p{};
    for (std::size_t c = 0; c < p.size(); ++c)
      p[c] = *mean_opt([c](const MetricReport& r) {
        return r.part_iou ? std::optional<double>((*r.part_iou)[c]) : std::nullopt;
      });
    out.part_iou = p;
  }
  out.counts = {};
  out.counts.samples = 0;
  for (const auto& r : reports) {
    out.counts.voxels_pred += r.counts.voxels_pred;
    out.counts.voxels_gt += r.counts.voxels_gt;
    out.counts.vertices += r.counts.vertices;
    out.counts.landmarks += r.counts.landmarks;
    out.counts.samples += r.counts.samples;
  }
  return out;
}

namespace {

nlohmann::json scores_json(const projection::SilhouetteScores& s) {
  return {{"iou", s.iou}, {"f1", s.f1}, {"accuracy", s.accuracy}};
}

projection::SilhouetteScores scores_from(const nlohmann::json& j) {
  return {j.at("iou").get<double>(), j.at("f1").get<double>(), j.at("accuracy").get<double>()};
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["voxel_iou"] = r.voxel_iou;
  j["silhouette"] = {{"front", scores_json(r.front)}, {"side", scores_json(r.side)}};
  j["surface_error_mm"] = opt_json(r.surface_error_mm);
  j["landmark_error_mm"] = opt_json(r.landmark_error_mm);
  j["raw_surface_mm"] = opt_json(r.raw_surface_mm);
  if (r.part_iou) {
    nlohmann::ordered_json p;
    for (std::size_t c = 0; c < kPartIouNames.size(); ++c) p[kPartIouNames[c]] = (*r.part_iou)[c];
    j["part_iou"] = p;
  } else {
    j["part_iou"] = nullptr;
  }
  j["counts"] = {{"voxels_pred", r.counts.voxels_pred},
                 {"voxels_gt", r.counts.voxels_gt},
                 {"vertices", r.counts.vertices},
                 {"landmarks", r.counts.landmarks},
                 {"samples", r.counts.samples}};
  return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricReport r;
    r.voxel_iou = j.at("voxel_iou").get<double>();
    r.front = scores_from(j.at("silhouette").at("front"));
    r.side = scores_from(j.at("silhouette").at("side"));
    r.surface_error_mm = opt_from(j, "surface_error_mm");
    r.landmark_error_mm = opt_from(j, "landmark_error_mm");
    r.raw_surface_mm = opt_from(j, "raw_surface_mm");
    if (j.contains("part_iou") && !j.at("part_iou").is_null()) {
      std::array<double, kPartIouCount> p{};
      for (std::size_t c = 0; c < p.size(); ++c) p[c] = j.at("part_iou").at(kPartIouNames[c]).get<double>();
      r.part_iou = p;
    }
    const auto& c = j.at("counts");
    r.counts = {c.at("voxels_pred").get<std::size_t>(), c.at("voxels_gt").get<std::size_t>(),
                c.at("vertices").get<std::size_t>(), c.at("landmarks").get<std::size_t>(),
                c.at("samples").get<std::size_t>()};
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, std::string("metric report: ") + e.what());
  }
}

}  // namespace bodyvox::evalcli
