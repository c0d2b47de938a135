#include "bodyvox/voxcore.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace bodyvox::voxcore {

void TriMesh::validate() const {
  const int n = int(vertices.size());
  for (const auto& v : vertices) {
    require(v.allFinite(), ErrorCode::invalid_argument, "mesh has a non-finite vertex");
  }
  for (const auto& f : faces) {
    for (int i : f) {
      require(i >= 0 && i < n, ErrorCode::invalid_argument, "face index out of range");
    }
    require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorCode::invalid_argument,
            "degenerate face with repeated index");
  }
  if (!labels.empty()) {
    require(labels.size() == vertices.size(), ErrorCode::invalid_argument,
            "label count does not match vertex count");
  }
}

bool TriMesh::is_watertight() const {
  if (faces.empty()) return false;
  // Directed edge counts; a closed oriented manifold uses each directed edge once
  // and its reverse once.
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) ++directed[{f[k], f[(k + 1) % 3]}];
  }
  for (const auto& [e, count] : directed) {
    if (count != 1) return false;
    auto rev = directed.find({e.second, e.first});
    if (rev == directed.end() || rev->second != 1) return false;
  }
  return true;
}

Aabb bounds(std::span<const Vec3> points) {
  Aabb box;
  for (const auto& p : points) box.extend(p);
  return box;
}

namespace {

int parse_index(std::string_view token, int vertex_count) {
  const auto slash = token.find('/');
  if (slash != std::string_view::npos) token = token.substr(0, slash);
  int idx = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), idx);
  require(ec == std::errc() && ptr == token.data() + token.size(), ErrorCode::malformed_payload,
          "bad OBJ face index '" + std::string(token) + "'");
  if (idx < 0) idx = vertex_count + idx + 1;  // relative index
  require(idx >= 1 && idx <= vertex_count, ErrorCode::malformed_payload,
          "OBJ face index out of range");
  return idx - 1;
}

}  // namespace

TriMesh read_obj(std::istream& in) {
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      require(bool(ls >> p.x() >> p.y() >> p.z()), ErrorCode::malformed_payload,
              "bad OBJ vertex line: " + line);
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) poly.push_back(parse_index(tok, int(mesh.vertices.size())));
      require(poly.size() >= 3, ErrorCode::malformed_payload, "OBJ face with < 3 vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
      }
    }
  }
  return mesh;
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::io, "cannot open " + path.string());
  return read_obj(in);
}

void write_obj(std::ostream& out, const TriMesh& mesh) {
  char buf[64];
  for (const auto& v : mesh.vertices) {
    out << 'v';
    for (int k = 0; k < 3; ++k) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v[k]);
      out << ' ' << std::string_view(buf, std::size_t(ptr - buf));
    }
    out << '\n';
  }
  for (const auto& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  write_obj(out, mesh);
}

std::vector<int> read_labels(const std::filesystem::path& path, std::size_t vertex_count) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::io, "cannot open " + path.string());
  std::vector<int> labels(vertex_count, -1);
  long long idx = 0;
  int part = 0;
  while (in >> idx >> part) {
    require(idx >= 0 && std::size_t(idx) < vertex_count, ErrorCode::malformed_payload,
            "label for vertex out of range");
    labels[std::size_t(idx)] = part;
  }
  require(in.eof(), ErrorCode::malformed_payload, "bad label line in " + path.string());
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ' ' << labels[i] << '\n';
}

}  // namespace bodyvox::voxcore
