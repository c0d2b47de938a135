#include "bodyvox/bodymodel.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bodyvox::bodymodel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  require(bool(out), ErrorCode::io, "cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(p, mode);
  require(bool(in), ErrorCode::io, "cannot open " + p.string());
  return in;
}

void put_f32le(std::ostream& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((bits >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

float get_f32le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_template(const fs::path& dir, const BodyTemplate& model) {
  model.validate();
  fs::create_directories(dir);
  voxcore::TriMesh mesh;
  mesh.vertices = model.vertices;
  mesh.faces = model.faces;
  voxcore::write_obj(dir / "mesh.obj", mesh);
  voxcore::write_labels(dir / "labels.txt", model.labels);

  {
    auto out = open_out(dir / "skin.txt");
    for (const auto& s : model.skin) {
      for (int k = 0; k < 4; ++k) out << (k ? " " : "") << s.joint[std::size_t(k)] << ' ' << num(s.weight[std::size_t(k)]);
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "regressor.txt");
    for (const auto& row : model.regressor) {
      out << row.size();
      for (const auto& [v, w] : row) out << ' ' << v << ' ' << num(w);
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "tree.txt");
    out << "root " << model.root << '\n';
    for (int j = 0; j < kNumJoints; ++j) out << j << ' ' << model.parent[std::size_t(j)] << ' ' << joint_name(j) << '\n';
  }
  {
    auto out = open_out(dir / "landmarks.txt");
    for (int v : model.landmarks) out << v << '\n';
  }
  {
    auto out = open_out(dir / "basis.bin", std::ios::binary);
    const json header = {{"rows", model.num_vertices()},
                         {"dims", 3},
                         {"components", kNumShape},
                         {"dtype", "float32"},
                         {"endian", "little"},
                         {"order", "vertex, axis, component"}};
    out << header.dump() << '\n';
    for (Eigen::Index r = 0; r < model.basis.rows(); ++r)
      for (int k = 0; k < kNumShape; ++k) put_f32le(out, float(model.basis(r, k)));
  }
}

BodyTemplate load_template(const fs::path& dir) {
  BodyTemplate t;
  const voxcore::TriMesh mesh = voxcore::read_obj(dir / "mesh.obj");
  t.vertices = mesh.vertices;
  t.faces = mesh.faces;
  const std::size_t n = t.vertices.size();
  t.labels = voxcore::read_labels(dir / "labels.txt", n);

  {
    auto in = open_in(dir / "skin.txt");
    t.skin.resize(n);
    for (auto& s : t.skin) {
      for (int k = 0; k < 4; ++k) in >> s.joint[std::size_t(k)] >> s.weight[std::size_t(k)];
      require(bool(in), ErrorCode::malformed_payload, "skin.txt is short or malformed");
    }
  }
  {
    auto in = open_in(dir / "regressor.txt");
    t.regressor.assign(kNumJoints, {});
    for (auto& row : t.regressor) {
      std::size_t count = 0;
      in >> count;
      require(bool(in) && count <= n, ErrorCode::malformed_payload, "regressor.txt is malformed");
      row.resize(count);
      for (auto& [v, w] : row) in >> v >> w;
      require(bool(in), ErrorCode::malformed_payload, "regressor.txt is malformed");
    }
  }
  {
    auto in = open_in(dir / "tree.txt");
    std::string word;
    in >> word >> t.root;
    require(bool(in) && word == "root", ErrorCode::malformed_payload, "tree.txt must start with 'root <index>'");
    for (int j = 0; j < kNumJoints; ++j) {
      int idx = -1;
      std::string name;
      in >> idx >> t.parent[std::size_t(j)] >> name;
      require(bool(in) && idx == j, ErrorCode::malformed_payload, "tree.txt is malformed");
    }
  }
  {
    auto in = open_in(dir / "landmarks.txt");
    for (int v; in >> v;) t.landmarks.push_back(v);
    require(in.eof(), ErrorCode::malformed_payload, "landmarks.txt is malformed");
  }
  {
    auto in = open_in(dir / "basis.bin", std::ios::binary);
    std::string line;
    std::getline(in, line);
    json header;
    try {
      header = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::malformed_header, std::string("basis.bin header: ") + e.what());
    }
    require(header.value("rows", std::size_t(0)) == n && header.value("dims", 0) == 3 &&
                header.value("components", 0) == kNumShape && header.value("dtype", "") == "float32",
            ErrorCode::malformed_header, "basis.bin header does not match the mesh");
    const std::size_t count = 3 * n * kNumShape;
    std::vector<unsigned char> raw(4 * count);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    require(std::size_t(in.gcount()) == raw.size(), ErrorCode::truncated_payload, "basis.bin payload is truncated");
    t.basis.resize(Eigen::Index(3 * n), kNumShape);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < t.basis.rows(); ++r)
      for (int k = 0; k < kNumShape; ++k, ++i) t.basis(r, k) = get_f32le(&raw[4 * i]);
  }
  t.validate();
  return t;
}

std::string params_to_json(const BodyParams& p) {
  json theta = json::array();
  for (const auto& t : p.theta)
    for (int c = 0; c < 3; ++c) theta.push_back(t[c]);
  json beta = json::array();
  for (Eigen::Index k = 0; k < p.beta.size(); ++k) beta.push_back(p.beta[k]);
  const json j = {{"theta", theta},
                  {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
                  {"beta", beta}};
  return j.dump(2);
}

BodyParams params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::malformed_payload, std::string("params JSON: ") + e.what());
  }
  auto numbers = [&](const char* key, std::size_t expected) {
    require(j.contains(key) && j[key].is_array() && j[key].size() == expected, ErrorCode::malformed_payload,
            std::string("params JSON: '") + key + "' must be an array of " + std::to_string(expected) + " numbers");
    std::vector<double> out;
    for (const auto& v : j[key]) {
      require(v.is_number(), ErrorCode::malformed_payload, std::string("params JSON: non-numeric entry in ") + key);
      out.push_back(v.get<double>());
    }
    return out;
  };
  const auto theta = numbers("theta", 3 * kNumJoints);
  const auto trans = numbers("translation", 3);
  const auto beta = numbers("beta", kNumShape);
  BodyParams p;
  for (int k = 0; k < kNumJoints; ++k) p.theta[std::size_t(k)] = Vec3(theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
  p.translation = Vec3(trans[0], trans[1], trans[2]);
  for (int k = 0; k < kNumShape; ++k) p.beta[k] = beta[std::size_t(k)];
  require(p.finite(), ErrorCode::non_finite, "params JSON contains non-finite values");
  return p;
}

void save_params(const fs::path& path, const BodyParams& p) {
  auto out = open_out(path);
  out << params_to_json(p) << '\n';
}

BodyParams load_params(const fs::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return params_from_json(ss.str());
}

}  // namespace bodyvox::bodymodel
