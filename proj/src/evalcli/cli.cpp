#include "bodyvox/bodymodel.hpp"
#include "bodyvox/evalcli.hpp"
#include "bodyvox/gradnet.hpp"
#include "bodyvox/heatfields.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

namespace bodyvox::evalcli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Options every subcommand accepts.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string template_dir;

  Config load() const {
    Config c = config_path.empty() ? Config{} : load_config(config_path);
    if (seed) c.seed = *seed;
    return c;
  }
  bodymodel::BodyTemplate body_template(const Config& c) const {
    return template_dir.empty() ? bodymodel::make_synthetic_template(c.template_seed)
                                : bodymodel::load_template(template_dir);
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Random seed (overrides the config)");
  app->add_option("--template", c.template_dir, "Body template directory (default: synthetic template)");
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::io, "cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  out << text << '\n';
}

std::vector<Vec3> vec3_list(const Json& j, const std::string& what) {
  std::vector<Vec3> out;
  try {
    for (const auto& p : j) {
      const auto v = p.get<std::vector<double>>();
      require(v.size() == 3, ErrorCode::malformed_payload, what + ": points need three coordinates");
      out.emplace_back(v[0], v[1], v[2]);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, what + ": " + e.what());
  }
  return out;
}

std::vector<Vec2> vec2_list(const Json& j, const std::string& what) {
  std::vector<Vec2> out;
  try {
    for (const auto& p : j) {
      const auto v = p.get<std::vector<double>>();
      require(v.size() >= 2, ErrorCode::malformed_payload, what + ": points need two coordinates");
      out.emplace_back(v[0], v[1]);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, what + ": " + e.what());
  }
  return out;
}

Json to_json(std::span<const Vec3> pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back({p.x(), p.y(), p.z()});
  return a;
}

// Plain parameter JSON, or a fit result carrying one under "params".
bodymodel::BodyParams load_params_any(const fs::path& path) {
  const Json j = read_json(path);
  return bodymodel::params_from_json((j.is_object() && j.contains("params") ? j.at("params") : j).dump());
}

voxcore::VoxelGrid occupancy(const voxcore::ProbVolume& v) {
  return v.threshold(v.space == voxcore::Space::logit ? 0.0 : 0.5);
}

// ---- voxelize -------------------------------------------------------------------

struct VoxelizeArgs {
  std::string mesh, out, labels, parts_out;
  int res = 0;
  double fill = 0.0;
  std::vector<double> root;
  bool surface = false;
};

int cmd_voxelize(const Common& com, const VoxelizeArgs& a, std::ostream& out) {
  const Config cfg = com.load();
  auto mesh = voxcore::read_obj(a.mesh);
  if (!a.labels.empty()) mesh.labels = voxcore::read_labels(a.labels, mesh.vertices.size());
  voxcore::AlignConfig align;
  align.resolution = a.res > 0 ? a.res : cfg.voxel.resolution;
  align.fill_ratio = a.fill > 0 ? a.fill : cfg.voxel.fill_ratio;
  if (!a.root.empty()) {
    require(a.root.size() == 3, ErrorCode::invalid_argument, "--root takes x,y,z");
    align.root = Vec3(a.root[0], a.root[1], a.root[2]);
  }
  const auto frame = voxcore::make_frame(mesh, align);
  const auto grid = voxcore::voxelize(mesh, frame, a.surface ? voxcore::FillMode::surface : voxcore::FillMode::solid);
  if (fs::path(a.out).extension() == ".binvox") {
    voxcore::write_grid(a.out, grid);
  } else {
    write_raw_volume(a.out, voxcore::ProbVolume::from_grid(grid));
  }
  if (!a.parts_out.empty()) {
    require(mesh.has_labels(), ErrorCode::invalid_argument, "--parts-out needs --labels");
    write_raw_volume(a.parts_out, voxcore::voxelize_parts(mesh, frame));
  }
  const auto n = std::count(grid.data.begin(), grid.data.end(), 1);
  out << "occupied " << n << " of " << grid.dims.count() << (grid.surface_only ? " (surface only: mesh not closed)" : "")
      << '\n';
  return exit_ok;
}

// ---- project ---------------------------------------------------------------------

int cmd_project(const Common& com, const std::string& in, const std::string& view_name, const std::string& out_path,
                std::ostream& out) {
  com.load();
  const auto vol = read_volume(in);
  const auto view = view_name == "side" ? projection::View::side : projection::View::front;
  const auto sil = projection::project(vol.space == voxcore::Space::label ? voxcore::ProbVolume::from_grid(occupancy(vol))
                                                                          : vol,
                                       view);
  auto binary = sil;
  if (vol.space == voxcore::Space::logit)
    for (auto& v : binary.data) v = v >= 0.0 ? 1.0 : 0.0;
  projection::write_pgm(out_path, binary);
  out << projection::to_string(view) << ' ' << sil.cols << 'x' << sil.rows << '\n';
  return exit_ok;
}

// ---- encode ----------------------------------------------------------------------

int cmd_encode(const Common& com, const std::string& in, const std::string& mode, bool decode,
               const std::string& out_path, std::ostream& out) {
  const Config cfg = com.load();
  const Json j = read_json(in);
  const heatfields::DepthQuantizer quant(cfg.heatmap.depth_range, cfg.heatmap.depth_bins);
  Json result;
  try {
    if (!decode) {
      heatfields::Skeleton skel;
      skel.joints = vec3_list(j.at("joints"), in);
      if (j.contains("root")) skel.root = j.at("root").get<int>();
      if (mode == "2d") {
        const auto hm = heatfields::encode_2d(skel, cfg.heatmap.resolution, cfg.heatmap.sigma);
        const auto back = heatfields::decode_2d(hm);
        double worst = 0.0;
        for (std::size_t i = 0; i < skel.joints.size(); ++i)
          worst = std::max(worst, (back.joints[i] - skel.joints[i]).head<2>().cwiseAbs().maxCoeff());
        result = {{"kind", "2d"}, {"joints", hm.joints}, {"resolution", hm.resolution}, {"sigma", hm.sigma},
                  {"data", hm.data}};
        out << "2d heatmap " << hm.joints << 'x' << hm.resolution << "^2, max decode error " << worst << " cells\n";
      } else {
        heatfields::HeatmapConfig hc;
        hc.resolution = cfg.heatmap.resolution;
        hc.sigma = cfg.heatmap.sigma;
        hc.depth_bins = cfg.heatmap.depth_bins;
        hc.depth_range = cfg.heatmap.depth_range;
        hc.sigma_bins = cfg.heatmap.sigma_bins;
        const auto hm = heatfields::encode_3d(skel, quant, hc);
        const double root_depth = skel.joints.at(std::size_t(skel.root)).z();
        const auto back = heatfields::decode_3d(hm, quant, root_depth);
        double worst = 0.0;
        for (std::size_t i = 0; i < skel.joints.size(); ++i)
          if (!hm.clipped[i]) worst = std::max(worst, std::abs(back.joints[i].z() - skel.joints[i].z()));
        result = {{"kind", "3d"},
                  {"joints", hm.joints},
                  {"resolution", hm.resolution},
                  {"bins", hm.bins},
                  {"sigma", hm.sigma},
                  {"sigma_bins", hm.sigma_bins},
                  {"frame", {{"mm_per_cell", hm.frame->mm_per_cell}, {"center", {hm.frame->center_mm.x(), hm.frame->center_mm.y()}}}},
                  {"clipped", hm.clipped},
                  {"data", hm.data}};
        out << "3d heatmap " << hm.joints << 'x' << hm.resolution << "^2x" << hm.bins << ", max depth error " << worst
            << " mm\n";
      }
    } else {
      heatfields::Skeleton skel;
      if (j.at("kind") == "2d") {
        heatfields::JointHeatmap2D hm;
        hm.joints = j.at("joints").get<int>();
        hm.resolution = j.at("resolution").get<int>();
        hm.sigma = j.at("sigma").get<double>();
        hm.data = j.at("data").get<std::vector<double>>();
        skel = heatfields::decode_2d(hm);
      } else {
        heatfields::JointHeatmap3D hm;
        hm.joints = j.at("joints").get<int>();
        hm.resolution = j.at("resolution").get<int>();
        hm.bins = j.at("bins").get<int>();
        hm.sigma = j.at("sigma").get<double>();
        hm.sigma_bins = j.at("sigma_bins").get<double>();
        const auto& f = j.at("frame");
        const auto c = f.at("center").get<std::vector<double>>();
        require(c.size() == 2, ErrorCode::malformed_payload, "frame center needs two values");
        hm.frame = heatfields::HeatmapFrame{f.at("mm_per_cell").get<double>(), Vec2(c[0], c[1])};
        hm.data = j.at("data").get<std::vector<double>>();
        skel = heatfields::decode_3d(hm, quant, cfg.eval.root_depth_mm);
      }
      result = {{"joints", to_json(skel.joints)}, {"root", skel.root}, {"low_confidence", skel.low_confidence}};
      out << "decoded " << skel.joints.size() << " joints\n";
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, in + ": " + e.what());
  }
  write_text(out_path, result.dump());
  return exit_ok;
}

// ---- fit -------------------------------------------------------------------------

struct FitArgs {
  std::string mode, volume, joints, init, out;
};

int cmd_fit(const Common& com, const FitArgs& a, std::ostream& out) {
  const Config cfg = com.load();
  const auto model = com.body_template(cfg);
  const auto vol = read_volume(a.volume);
  const Json j = read_json(a.joints);

  fitkit::FitProblem prob;
  prob.lambda = cfg.fit.lambda;
  prob.lambda_j = cfg.fit.lambda_j;
  prob.lambda_2d = cfg.fit.lambda_2d;
  prob.lambda_beta = cfg.fit.lambda_beta;
  require(j.contains("joints3d"), ErrorCode::malformed_payload, a.joints + ": needs joints3d");
  prob.joints3d = vec3_list(j.at("joints3d"), a.joints);
  require(prob.joints3d.size() == std::size_t(bodymodel::kNumJoints), ErrorCode::malformed_payload,
          a.joints + ": joints3d needs one point per joint");

  bodymodel::BodyParams init;
  if (!a.init.empty()) {
    init = load_params_any(a.init);
  } else {
    // Rest pose moved so its root sits on the target root.
    const bodymodel::PosedBody rest(model, init);
    init.translation = prob.joints3d[bodymodel::pelvis] - rest.joints()[bodymodel::pelvis];
  }
  const auto opts = fit_options(cfg);

  fitkit::FitResult r;
  if (a.mode == "silhouette") {
    auto grid = occupancy(vol);
    const auto sil = projection::project(grid, projection::View::front);
    prob.contour = fitkit::silhouette_contour(sil);
    prob.image_cols = sil.cols;
    prob.image_rows = sil.rows;
    if (j.contains("joints2d")) {
      prob.joints2d = vec2_list(j.at("joints2d"), a.joints);
    } else {
      for (const auto& p : prob.joints3d) prob.joints2d.push_back(vol.transform.to_grid(p).head<2>());
    }
    r = fitkit::fit_silhouette(prob, model, init, opts);
  } else {
    prob.surface = fitkit::marching_cubes(vol.space == voxcore::Space::label ? voxcore::ProbVolume::from_grid(occupancy(vol)) : vol,
                                          vol.space == voxcore::Space::logit ? 0.0 : 0.5);
    r = a.mode == "beta" ? fitkit::fit_beta_only(prob, model, init, opts) : fitkit::fit_chamfer(prob, model, init, opts);
  }
  fitkit::write_result(a.out, r, model);
  out << a.mode << ": objective " << r.residuals.total << " after " << r.outer_iterations << " outer iterations, "
      << (r.converged ? "converged" : "not converged") << '\n';
  return r.converged ? exit_ok : exit_not_converged;
}

// ---- toy training ------------------------------------------------------------------

gradnet::TrainConfig train_config(const Config& c) {
  gradnet::TrainConfig t;
  t.lr = c.train.lr;
  t.batch = c.train.batch;
  t.seed = c.seed;
  t.iters = {c.train.iters[0], c.train.iters[1], c.train.iters[2], c.train.iters[3], c.train.iters[4]};
  t.balance_iters = c.train.balance_iters;
  t.stage_balance_iters = c.train.stage_balance_iters;
  t.measure = losskit::parse_grad_magnitude(c.train.grad_measure);
  t.log_grad_every = c.train.log_grad_every;
  return t;
}

std::vector<gradnet::ToySample> toy_data(const Config& c, int n, std::uint64_t salt) {
  gradnet::ToyDataConfig d;
  d.voxel_res = c.train.voxel_res;
  return gradnet::make_toy_set(n, c.seed * 1000003 + salt, d);
}

Json terms_json(const std::array<double, losskit::kNumTerms>& t) {
  Json j = Json::object();
  for (std::size_t k = 0; k < t.size(); ++k)
    if (std::isfinite(t[k])) j[losskit::kTermNames[k]] = t[k];
  return j;
}

int cmd_balance(const Common& com, int stage, int batches, const std::vector<double>& proportions,
                const std::string& out_path, std::ostream& out) {
  const Config cfg = com.load();
  Json j;
  if (!proportions.empty()) {
    require(proportions.size() == losskit::kNumTerms, ErrorCode::invalid_argument, "--proportions takes six values");
    std::array<double, losskit::kNumTerms> p{};
    std::copy(proportions.begin(), proportions.end(), p.begin());
    const auto w = losskit::LossWeights::from_proportions(p);
    j["weights"] = terms_json(w.w);
    for (std::size_t k = 0; k < p.size(); ++k)
      out << losskit::kTermNames[k] << ' ' << std::setprecision(9) << w.w[k] << '\n';
  } else {
    require(stage >= 1 && stage <= 5, ErrorCode::invalid_argument, "--stage must be 1..5");
    const auto data = toy_data(cfg, cfg.train.samples, 0);
    const gradnet::ToyPredictor model(cfg.seed, {}, cfg.train.voxel_res);
    const auto s = gradnet::Stage(stage);
    const auto b = gradnet::measure_balance(model, data, s, batches > 0 ? batches : cfg.train.balance_iters,
                                            train_config(cfg));
    const auto terms = gradnet::stage_terms(s);
    Json rows = Json::array();
    for (std::size_t i = 0; i < terms.size(); ++i) {
      rows.push_back({{"term", losskit::kTermNames[std::size_t(terms[i])]},
                      {"mean_magnitude", b.mean_magnitude[i]},
                      {"raw", b.raw[i]},
                      {"weight", b.weights[i]}});
      out << losskit::kTermNames[std::size_t(terms[i])] << " magnitude " << b.mean_magnitude[i] << " weight "
          << b.weights[i] << '\n';
    }
    j["stage"] = stage;
    j["measure"] = cfg.train.grad_measure;
    j["terms"] = rows;
  }
  if (!out_path.empty()) write_text(out_path, j.dump(2));
  return exit_ok;
}

int cmd_train(const Common& com, const std::string& dir, std::ostream& out) {
  const Config cfg = com.load();
  const auto data = toy_data(cfg, cfg.train.samples, 0);
  gradnet::ToyPredictor model(cfg.seed, {}, cfg.train.voxel_res);
  auto tc = train_config(cfg);
  fs::create_directories(dir);
  tc.log_csv = fs::path(dir) / "log.csv";
  const auto log = gradnet::train_staged(model, data, tc);
  gradnet::save_checkpoint(fs::path(dir) / "checkpoint", model.params());
  Json stages = Json::array();
  for (const auto& s : log.stages) {
    stages.push_back({{"stage", s.stage},
                      {"weights", terms_json(s.weights.w)},
                      {"start", terms_json(s.start)},
                      {"end", terms_json(s.end)},
                      {"start_combined", s.start_combined},
                      {"end_combined", s.end_combined}});
    out << "stage " << s.stage << ": combined " << s.start_combined << " -> " << s.end_combined << '\n';
  }
  write_text(fs::path(dir) / "summary.json", Json{{"samples", data.size()}, {"stages", stages}}.dump(2));
  return exit_ok;
}

int cmd_ablate(const Common& com, const std::string& out_path, std::ostream& out) {
  const Config cfg = com.load();
  const auto train = toy_data(cfg, cfg.train.samples, 0);
  const auto held = toy_data(cfg, cfg.train.held_out, 1);
  using gradnet::StageInputs;
  const std::vector<gradnet::AblationVariant> variants = {
      {"all inputs", StageInputs{}, false},
      {"image", StageInputs{false, false, false, true}, false},
      {"2d pose", StageInputs{true, false, false, false}, false},
      {"segmentation", StageInputs{false, true, false, false}, false},
      {"3d pose", StageInputs{false, false, true, false}, false},
      {"2d pose + segm + 3d pose", StageInputs{true, true, true, false}, false},
      {"all inputs, ground-truth fields", StageInputs{}, true}};
  const auto rows = gradnet::ablate_inputs(variants, train, held, train_config(cfg));
  Json table = Json::array();
  out << "name,pose2d,segm,pose3d,image,iou\n";
  for (const auto& r : rows) {
    table.push_back({{"name", r.name}, {"pose2d", r.pose2d}, {"segm", r.segm}, {"pose3d", r.pose3d},
                     {"image", r.image}, {"iou", r.iou}});
    out << r.name << ',' << r.pose2d << ',' << r.segm << ',' << r.pose3d << ',' << r.image << ',' << r.iou << '\n';
  }
  if (!out_path.empty()) write_text(out_path, table.dump(2));
  return exit_ok;
}

// ---- eval / report ----------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, iou, pred_parts, gt_parts, fit_params, gt_params, out;
  std::vector<std::string> merge;
};

MetricReport evaluate(const Common& com, const EvalArgs& a, const Config& cfg, std::vector<double>* vertex_error,
                      voxcore::TriMesh* gt_mesh) {
  const auto pred = read_volume(a.pred);
  std::string gt_path = a.gt;
  if (a.iou == "self") {
    gt_path = a.pred;
  } else {
    require(a.iou.empty(), ErrorCode::invalid_argument, "--iou takes 'self'");
  }
  require(!gt_path.empty(), ErrorCode::invalid_argument, "a ground-truth volume (--gt) or --iou self is required");
  MetricReport r = volume_metrics(pred, occupancy(read_volume(gt_path)));
  if (!a.pred_parts.empty() || !a.gt_parts.empty()) {
    require(!a.pred_parts.empty() && !a.gt_parts.empty(), ErrorCode::invalid_argument,
            "--pred-parts and --gt-parts go together");
    r.part_iou = part_ious(read_raw_volume(a.pred_parts), read_raw_volume(a.gt_parts));
  }
  if (!a.fit_params.empty() || !a.gt_params.empty()) {
    require(!a.fit_params.empty() && !a.gt_params.empty(), ErrorCode::invalid_argument,
            "--fit-params and --gt-params go together");
    const auto model = com.body_template(cfg);
    const auto fit = bodymodel::pose_vertices(model, load_params_any(a.fit_params));
    const auto gt = bodymodel::pose_vertices(model, load_params_any(a.gt_params));
    r.surface_error_mm = surface_error(fit, gt);
    r.counts.vertices = fit.size();
    if (!model.landmarks.empty()) {
      r.landmark_error_mm = landmark_error(fit, gt, model.landmarks);
      r.counts.landmarks = model.landmarks.size();
    }
    auto surface_src = pred;
    if (cfg.eval.mm_per_cell > 0.0)
      surface_src.transform.scale = cfg.eval.mm_per_cell * double(surface_src.transform.longest);
    const auto iso = fitkit::marching_cubes(
        pred.space == voxcore::Space::label ? voxcore::ProbVolume::from_grid(occupancy(surface_src)) : surface_src,
        pred.space == voxcore::Space::logit ? 0.0 : 0.5);
    if (!iso.vertices.empty()) r.raw_surface_mm = point_set_distance(iso.vertices, gt);
    if (vertex_error) {
      const std::vector<MeshPair> trial = {{fit, gt}};
      *vertex_error = per_vertex_error(trial);
    }
    if (gt_mesh) {
      *gt_mesh = model.mesh();
      gt_mesh->vertices = gt;
    }
  }
  return r;
}

int cmd_eval(const Common& com, const EvalArgs& a, std::ostream& out) {
  const Config cfg = com.load();
  const auto r = evaluate(com, a, cfg, nullptr, nullptr);
  const auto text = report_to_json(r);
  if (!a.out.empty()) write_text(a.out, text);
  out << text << '\n';
  return exit_ok;
}

int cmd_report(const Common& com, const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const Config cfg = com.load();
  require(!a.out.empty(), ErrorCode::invalid_argument, "report needs -o DIR");
  fs::create_directories(a.out);
  const fs::path dir = a.out;
  MetricReport r;
  if (!a.merge.empty()) {
    std::vector<MetricReport> parts;
    for (const auto& p : a.merge) {
      std::ifstream in(p);
      require(bool(in), ErrorCode::io, "cannot read " + p);
      std::stringstream ss;
      ss << in.rdbuf();
      parts.push_back(report_from_json(ss.str()));
    }
    r = aggregate(parts);
  } else {
    std::vector<double> err;
    voxcore::TriMesh mesh;
    r = evaluate(com, a, cfg, &err, &mesh);
    const auto pred = occupancy(read_volume(a.pred));
    const auto gt = a.iou == "self" ? pred : occupancy(read_volume(a.gt));
    for (auto view : {projection::View::front, projection::View::side}) {
      const std::string name = projection::to_string(view);
      projection::write_pgm(dir / (name + "_pred.pgm"), projection::project(pred, view));
      projection::write_pgm(dir / (name + "_gt.pgm"), projection::project(gt, view));
    }
    if (!err.empty()) write_error_map(dir / "error_map.obj", mesh, err);
  }
  write_text(dir / "metrics.json", report_to_json(r));
  // Run metadata lives apart from the metrics so metrics.json depends only on the inputs.
  Json run;
  run["command"] = argv;
  run["seed"] = cfg.seed;
  run["config"] = Json::parse(config_to_json(cfg));
  write_text(dir / "run.json", run.dump(2));
  out << "voxel IOU " << r.voxel_iou << ", report in " << dir.string() << '\n';
  return exit_ok;
}

// ---- subsets ----------------------------------------------------------------------

int cmd_subsets(const Common& com, const std::string& in, std::vector<double> percentiles, const std::string& out_path,
                std::ostream& out) {
  const Config cfg = com.load();
  if (percentiles.empty()) percentiles.assign(cfg.eval.percentiles.begin(), cfg.eval.percentiles.end());
  const Json j = read_json(in);
  std::vector<double> d;
  try {
    d = (j.is_object() ? j.at("distances") : j).get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, in + ": " + e.what());
  }
  Json result = Json::object();
  for (double p : percentiles) {
    const auto idx = build_subsets(d, p);
    std::ostringstream key;
    key << 's' << p;
    result[key.str()] = idx;
    out << key.str() << ": " << idx.size() << " of " << d.size() << '\n';
  }
  if (!out_path.empty()) write_text(out_path, result.dump(2));
  return exit_ok;
}

// ---- synth ------------------------------------------------------------------------

int cmd_synth(const Common& com, const std::string& dir, int res, double pose_sigma, double perturb, int settle,
              std::ostream& out) {
  const Config cfg = com.load();
  const auto model = com.body_template(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  bodymodel::BodyParams gt;
  for (auto& t : gt.theta) t = pose_sigma * Vec3(normal(rng), normal(rng), normal(rng));
  for (int k = 0; k < bodymodel::kNumShape; ++k) gt.beta[k] = normal(rng);
  bodymodel::BodyParams init = gt;
  for (auto& t : init.theta) t += perturb * Vec3(normal(rng), normal(rng), normal(rng));
  init.beta.setZero();

  const bodymodel::PosedBody body(model, gt);
  auto mesh = model.mesh();
  mesh.vertices = body.vertices();
  voxcore::AlignConfig align;
  align.resolution = res > 0 ? res : cfg.voxel.resolution;
  align.fill_ratio = cfg.voxel.fill_ratio;
  align.root = body.joints()[bodymodel::pelvis];
  const auto frame = voxcore::make_frame(mesh, align);
  const auto grid = voxcore::voxelize(mesh, frame);

  const fs::path d = dir;
  fs::create_directories(d);
  bodymodel::save_params(d / "gt_params.json", gt);
  const auto volume = voxcore::ProbVolume::from_grid(grid);
  if (settle > 0) {
    // Replace the init by a long Chamfer fit from it, so a default-budget fit
    // started there converges.
    fitkit::FitProblem prob;
    prob.lambda = cfg.fit.lambda;
    prob.surface = fitkit::marching_cubes(volume);
    prob.joints3d = body.joints();
    auto opts = fit_options(cfg);
    opts.max_outer = settle;
    const auto r = fitkit::fit_chamfer(prob, model, init, opts);
    require(r.converged, ErrorCode::degenerate_input, "settling fit did not converge");
    init = r.params;
  }
  bodymodel::save_params(d / "init_params.json", init);
  voxcore::write_obj(d / "mesh.obj", mesh);
  voxcore::write_labels(d / "labels.txt", mesh.labels);
  write_raw_volume(d / "volume.raw", volume);
  write_raw_volume(d / "parts.raw", voxcore::voxelize_parts(mesh, frame));
  Json joints;
  joints["joints3d"] = to_json(body.joints());
  Json j2 = Json::array();
  for (const auto& p : body.joints()) {
    const Vec3 g = frame.transform.to_grid(p);
    j2.push_back({g.x(), g.y()});
  }
  joints["joints2d"] = j2;
  write_text(d / "joints.json", joints.dump(2));
  out << "wrote synthetic sample to " << d.string() << " (" << grid.dims.w << "^3)\n";
  return exit_ok;
}

}  // namespace

int run_cli(std::span<const std::string> argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Voxel body reconstruction toolkit", argv.empty() ? "bodyvox" : argv[0]};
  app.require_subcommand(1);
  Common com;

  VoxelizeArgs vox;
  auto* c_vox = app.add_subcommand("voxelize", "Solid voxelization of an OBJ mesh");
  add_common(c_vox, com);
  c_vox->add_option("mesh", vox.mesh, "Input OBJ")->required()->check(CLI::ExistingFile);
  c_vox->add_option("-o,--out", vox.out, "Output .binvox or raw volume")->required();
  c_vox->add_option("--res", vox.res, "Grid resolution (default: config voxel.resolution)")->check(CLI::PositiveNumber);
  c_vox->add_option("--fill", vox.fill, "xy fill ratio")->check(CLI::Range(0.0, 1.0));
  c_vox->add_option("--root", vox.root, "Model point placed at depth D/2")->delimiter(',');
  c_vox->add_flag("--surface", vox.surface, "Surface cells only");
  c_vox->add_option("--labels", vox.labels, "Per-vertex part labels")->check(CLI::ExistingFile);
  c_vox->add_option("--parts-out", vox.parts_out, "Raw label volume output");

  std::string proj_in, proj_view = "front", proj_out;
  auto* c_proj = app.add_subcommand("project", "Max projection of a volume to a PGM silhouette");
  add_common(c_proj, com);
  c_proj->add_option("volume", proj_in, "Input volume")->required()->check(CLI::ExistingFile);
  c_proj->add_option("--view", proj_view, "front or side")->check(CLI::IsMember({"front", "side"}));
  c_proj->add_option("-o,--out", proj_out, "Output PGM")->required();

  std::string enc_in, enc_mode = "2d", enc_out;
  bool enc_decode = false;
  auto* c_enc = app.add_subcommand("encode", "Encode joints as heatmaps, or decode heatmaps");
  add_common(c_enc, com);
  c_enc->add_option("input", enc_in, "Skeleton JSON, or heatmap JSON with --decode")->required()->check(CLI::ExistingFile);
  c_enc->add_option("--mode", enc_mode, "2d or 3d")->check(CLI::IsMember({"2d", "3d"}));
  c_enc->add_flag("--decode", enc_decode, "Decode a heatmap file");
  c_enc->add_option("-o,--out", enc_out, "Output JSON")->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit the body model to a predicted volume");
  add_common(c_fit, com);
  c_fit->add_option("mode", fit.mode, "chamfer, beta or silhouette")
      ->required()
      ->check(CLI::IsMember({"chamfer", "beta", "silhouette"}));
  c_fit->add_option("--volume", fit.volume, "Predicted volume")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--joints", fit.joints, "JSON with joints3d (and optional joints2d)")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--init", fit.init, "Initial parameters JSON")->check(CLI::ExistingFile);
  c_fit->add_option("-o,--out", fit.out, "Output stem (.json and .obj)")->required();

  int bal_stage = 5, bal_batches = 0;
  std::vector<double> bal_props;
  std::string bal_out;
  auto* c_bal = app.add_subcommand("balance", "Gradient-magnitude loss weights on the toy predictor");
  add_common(c_bal, com);
  c_bal->add_option("--stage", bal_stage, "Training stage 1..5");
  c_bal->add_option("--batches", bal_batches, "Measurement batches (default: config)");
  c_bal->add_option("--proportions", bal_props, "Normalize six raw proportions instead")->delimiter(',');
  c_bal->add_option("-o,--out", bal_out, "Output JSON");

  std::string train_dir;
  auto* c_train = app.add_subcommand("train-toy", "Staged training of the toy predictor");
  add_common(c_train, com);
  c_train->add_option("-o,--out", train_dir, "Output directory")->required();

  std::string abl_out;
  auto* c_abl = app.add_subcommand("ablate", "Shape-stage input ablation on the toy predictor");
  add_common(c_abl, com);
  c_abl->add_option("-o,--out", abl_out, "Output JSON table");

  EvalArgs ev;
  auto add_eval = [&](CLI::App* c) {
    add_common(c, com);
    c->add_option("pred", ev.pred, "Predicted volume")->check(CLI::ExistingFile);
    c->add_option("--gt", ev.gt, "Ground-truth volume")->check(CLI::ExistingFile);
    c->add_option("--iou", ev.iou, "'self' compares the prediction with itself");
    c->add_option("--pred-parts", ev.pred_parts, "Predicted part label volume")->check(CLI::ExistingFile);
    c->add_option("--gt-parts", ev.gt_parts, "Ground-truth part label volume")->check(CLI::ExistingFile);
    c->add_option("--fit-params", ev.fit_params, "Fitted parameters JSON")->check(CLI::ExistingFile);
    c->add_option("--gt-params", ev.gt_params, "Ground-truth parameters JSON")->check(CLI::ExistingFile);
  };
  auto* c_eval = app.add_subcommand("eval", "Metrics of one prediction as JSON");
  add_eval(c_eval);
  c_eval->add_option("-o,--out", ev.out, "Also write the JSON here");
  auto* c_rep = app.add_subcommand("report", "Metrics JSON, silhouettes and error map in a directory");
  add_eval(c_rep);
  c_rep->add_option("--merge", ev.merge, "Average existing metrics.json files instead")->check(CLI::ExistingFile);
  c_rep->add_option("-o,--out", ev.out, "Output directory")->required();

  std::string sub_in, sub_out;
  std::vector<double> sub_p;
  auto* c_sub = app.add_subcommand("subsets", "Extreme-shape subsets from per-sample distances");
  add_common(c_sub, com);
  c_sub->add_option("distances", sub_in, "JSON array or {\"distances\": [...]}")->required()->check(CLI::ExistingFile);
  c_sub->add_option("--p", sub_p, "Percentiles (default: config)")->delimiter(',');
  c_sub->add_option("-o,--out", sub_out, "Output JSON");

  std::string syn_dir;
  int syn_res = 0;
  double syn_pose = 0.2, syn_perturb = 0.05;
  int syn_settle = 0;
  auto* c_syn = app.add_subcommand("synth", "Render a synthetic body sample");
  add_common(c_syn, com);
  c_syn->add_option("-o,--out", syn_dir, "Output directory")->required();
  c_syn->add_option("--res", syn_res, "Grid resolution")->check(CLI::PositiveNumber);
  c_syn->add_option("--pose-sigma", syn_pose, "Ground-truth pose spread, rad");
  c_syn->add_option("--perturb", syn_perturb, "Init pose perturbation, rad");
  c_syn->add_option("--settle", syn_settle, "Outer iterations of a Chamfer fit that refines the init (0: none)");

  auto* c_cfg = app.add_subcommand("config", "Print the effective configuration");
  add_common(c_cfg, com);

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
    return exit_ok;
  } catch (const CLI::Success&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return exit_usage;
  }

  try {
    if (c_vox->parsed()) return cmd_voxelize(com, vox, out);
    if (c_proj->parsed()) return cmd_project(com, proj_in, proj_view, proj_out, out);
    if (c_enc->parsed()) return cmd_encode(com, enc_in, enc_mode, enc_decode, enc_out, out);
    if (c_fit->parsed()) return cmd_fit(com, fit, out);
    if (c_bal->parsed()) return cmd_balance(com, bal_stage, bal_batches, bal_props, bal_out, out);
    if (c_train->parsed()) return cmd_train(com, train_dir, out);
    if (c_abl->parsed()) return cmd_ablate(com, abl_out, out);
    if (c_eval->parsed() || c_rep->parsed()) {
      if (ev.merge.empty() && ev.pred.empty()) {
        err << "error: a predicted volume is required\n\n" << (c_eval->parsed() ? c_eval : c_rep)->help();
        return exit_usage;
      }
      if (c_eval->parsed()) return cmd_eval(com, ev, out);
      return cmd_report(com, ev, std::vector<std::string>(argv.begin(), argv.end()), out);
    }
    if (c_sub->parsed()) return cmd_subsets(com, sub_in, sub_p, sub_out, out);
    if (c_syn->parsed()) return cmd_synth(com, syn_dir, syn_res, syn_pose, syn_perturb, syn_settle, out);
    if (c_cfg->parsed()) {
      out << config_to_json(com.load()) << '\n';
      return exit_ok;
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  }
  return exit_usage;
}

}  // namespace bodyvox::evalcli
