#include "bodyvox/evalcli.hpp"
#include "bodyvox/losskit.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace bodyvox::evalcli {

namespace {

using Json = nlohmann::ordered_json;

// Copies known keys out of one section and rejects the rest.
class Section {
 public:
  Section(const Json& root, const char* name) : name_(name) {
    if (root.contains(name)) {
      obj_ = root.at(name);
      require(obj_.is_object(), ErrorCode::malformed_payload, std::string("config: '") + name + "' must be an object");
    }
  }
  template <class T>
  Section& get(const char* key, T& value) {
    seen_.insert(key);
    if (obj_.contains(key)) {
      try {
        value = obj_.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        fail(ErrorCode::malformed_payload, "config: bad value for " + std::string(name_) + "." + key);
      }
    }
    return *this;
  }
  void done() const {
    for (const auto& [k, _] : obj_.items())
      require(seen_.count(k) > 0, ErrorCode::malformed_payload, "config: unknown key " + std::string(name_) + "." + k);
  }

 private:
  const char* name_;
  Json obj_ = Json::object();
  std::set<std::string> seen_;
};

void check(const Config& c) {
  auto need = [](bool ok, const char* what) { require(ok, ErrorCode::malformed_payload, std::string("config: ") + what); };
  need(c.voxel.resolution > 0, "voxel.resolution must be positive");
  need(c.voxel.fill_ratio > 0.0 && c.voxel.fill_ratio <= 1.0, "voxel.fill_ratio must lie in (0, 1]");
  need(c.heatmap.resolution > 0 && c.heatmap.sigma > 0.0 && c.heatmap.depth_bins > 0 && c.heatmap.depth_range > 0.0 &&
           c.heatmap.sigma_bins > 0.0,
       "heatmap values must be positive");
  need(c.fit.lambda >= 0.0 && c.fit.lambda_j >= 0.0 && c.fit.lambda_2d >= 0.0 && c.fit.lambda_beta >= 0.0,
       "fit weights must be non-negative");
  need(c.fit.contour_threshold > 0.0 && c.fit.max_outer > 0 && c.fit.max_inner > 0 && c.fit.rel_tol >= 0.0 &&
           c.fit.max_points > 0,
       "fit limits must be positive");
  need(c.fit.solver == "dogleg" || c.fit.solver == "lm", "fit.solver must be dogleg or lm");
  need(c.train.lr >= 0.0 && c.train.batch > 0 && c.train.samples > 0 && c.train.held_out > 0,
       "train rates and sizes must be positive");
  need(c.train.voxel_res == 32 || c.train.voxel_res == 64, "train.voxel_res must be 32 or 64");
  for (int it : c.train.iters) need(it >= 0, "train.iters must be non-negative");
  need(c.train.balance_iters > 0 && c.train.stage_balance_iters > 0, "balance iterations must be positive");
  losskit::parse_grad_magnitude(c.train.grad_measure);
  need(c.eval.mm_per_cell >= 0.0, "eval.mm_per_cell must be non-negative");
  for (double p : c.eval.percentiles) need(p > 0.0 && p <= 100.0, "eval.percentiles must lie in (0, 100]");
}

}  // namespace

Config config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_payload, std::string("config: ") + e.what());
  }
  require(j.is_object(), ErrorCode::malformed_payload, "config: top level must be an object");
  Config c;
  for (const auto& [k, v] : j.items()) {
    static const std::set<std::string> known = {"voxel", "heatmap", "fit", "train", "eval", "seed", "template_seed"};
    require(known.count(k) > 0, ErrorCode::malformed_payload, "config: unknown key " + k);
  }
  Section(j, "voxel").get("resolution", c.voxel.resolution).get("fill_ratio", c.voxel.fill_ratio).done();
  Section(j, "heatmap")
      .get("resolution", c.heatmap.resolution)
      .get("sigma", c.heatmap.sigma)
      .get("depth_bins", c.heatmap.depth_bins)
      .get("depth_range", c.heatmap.depth_range)
      .get("sigma_bins", c.heatmap.sigma_bins)
      .done();
  Section(j, "fit")
      .get("lambda", c.fit.lambda)
      .get("lambda_j", c.fit.lambda_j)
      .get("lambda_2d", c.fit.lambda_2d)
      .get("lambda_beta", c.fit.lambda_beta)
      .get("contour_threshold", c.fit.contour_threshold)
      .get("max_outer", c.fit.max_outer)
      .get("max_inner", c.fit.max_inner)
      .get("rel_tol", c.fit.rel_tol)
      .get("max_points", c.fit.max_points)
      .get("solver", c.fit.solver)
      .done();
  Section(j, "train")
      .get("lr", c.train.lr)
      .get("batch", c.train.batch)
      .get("samples", c.train.samples)
      .get("held_out", c.train.held_out)
      .get("voxel_res", c.train.voxel_res)
      .get("iters", c.train.iters)
      .get("balance_iters", c.train.balance_iters)
      .get("stage_balance_iters", c.train.stage_balance_iters)
      .get("grad_measure", c.train.grad_measure)
      .get("log_grad_every", c.train.log_grad_every)
      .done();
  Section(j, "eval")
      .get("root_depth_mm", c.eval.root_depth_mm)
      .get("mm_per_cell", c.eval.mm_per_cell)
      .get("percentiles", c.eval.percentiles)
      .done();
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("template_seed")) c.template_seed = j.at("template_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::malformed_payload, "config: seeds must be non-negative integers");
  }
  check(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const Config& c) {
  Json j;
  j["voxel"] = {{"resolution", c.voxel.resolution}, {"fill_ratio", c.voxel.fill_ratio}};
  j["heatmap"] = {{"resolution", c.heatmap.resolution},
                  {"sigma", c.heatmap.sigma},
                  {"depth_bins", c.heatmap.depth_bins},
                  {"depth_range", c.heatmap.depth_range},
                  {"sigma_bins", c.heatmap.sigma_bins}};
  j["fit"] = {{"lambda", c.fit.lambda},
              {"lambda_j", c.fit.lambda_j},
              {"lambda_2d", c.fit.lambda_2d},
              {"lambda_beta", c.fit.lambda_beta},
              {"contour_threshold", c.fit.contour_threshold},
              {"max_outer", c.fit.max_outer},
              {"max_inner", c.fit.max_inner},
              {"rel_tol", c.fit.rel_tol},
              {"max_points", c.fit.max_points},
              {"solver", c.fit.solver}};
  j["train"] = {{"lr", c.train.lr},
                {"batch", c.train.batch},
                {"samples", c.train.samples},
                {"held_out", c.train.held_out},
                {"voxel_res", c.train.voxel_res},
                {"iters", c.train.iters},
                {"balance_iters", c.train.balance_iters},
                {"stage_balance_iters", c.train.stage_balance_iters},
                {"grad_measure", c.train.grad_measure},
                {"log_grad_every", c.train.log_grad_every}};
  j["eval"] = {{"root_depth_mm", c.eval.root_depth_mm},
               {"mm_per_cell", c.eval.mm_per_cell},
               {"percentiles", c.eval.percentiles}};
  j["seed"] = c.seed;
  j["template_seed"] = c.template_seed;
  return j.dump(2);
}

fitkit::FitOptions fit_options(const Config& c) {
  fitkit::FitOptions o;
  o.solver = c.fit.solver == "lm" ? fitkit::Solver::lm : fitkit::Solver::dogleg;
  o.max_outer = c.fit.max_outer;
  o.max_inner = c.fit.max_inner;
  o.rel_tol = c.fit.rel_tol;
  o.max_points = c.fit.max_points;
  o.seed = c.seed;
  o.contour_threshold = c.fit.contour_threshold;
  return o;
}

}  // namespace bodyvox::evalcli
