#include "bodyvox/fitkit.hpp"

#include <json.hpp>

#include <fstream>

namespace bodyvox::fitkit {

std::string result_to_json(const FitResult& r) {
  using nlohmann::json;
  json j;
  j["params"] = json::parse(bodymodel::params_to_json(r.params));
  j["trace"] = r.trace;
  j["trace_outer"] = r.trace_outer;
  j["residuals"] = {{"chamfer_forward", r.residuals.chamfer_forward},
                    {"chamfer_backward", r.residuals.chamfer_backward},
                    {"joints3d", r.residuals.joints3d},
                    {"joints2d", r.residuals.joints2d},
                    {"contour", r.residuals.contour},
                    {"shape_prior", r.residuals.shape_prior},
                    {"total", r.residuals.total}};
  j["converged"] = r.converged;
  j["outer_iterations"] = r.outer_iterations;
  if (r.camera) {
    j["camera"] = {{"scale", r.camera->scale}, {"offset", {r.camera->offset.x(), r.camera->offset.y()}}};
  }
  return j.dump(2);
}

void write_result(const std::filesystem::path& stem, const FitResult& r, const BodyTemplate& model) {
  auto json_path = stem;
  json_path += ".json";
  std::ofstream out(json_path);
  require(bool(out), ErrorCode::io, "cannot write " + json_path.string());
  out << result_to_json(r) << '\n';
  voxcore::TriMesh mesh = model.mesh();
  mesh.vertices = bodymodel::pose_vertices(model, r.params);
  auto obj_path = stem;
  obj_path += ".obj";
  voxcore::write_obj(obj_path, mesh);
}

}  // namespace bodyvox::fitkit
