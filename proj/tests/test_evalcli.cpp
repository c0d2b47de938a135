#include "bodyvox/evalcli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

using namespace bodyvox;
using namespace bodyvox::evalcli;
namespace fs = std::filesystem;

namespace {

std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-500.0, 500.0);
  std::vector<Vec3> v(n);
  for (auto& p : v) p = Vec3(u(rng), u(rng), u(rng));
  return v;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("bodyvox_evalcli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bodyvox");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write_cube_obj(const fs::path& path, double half) {
  std::ofstream f(path);
  for (int i = 0; i < 8; ++i)
    f << "v " << (i & 1 ? half : -half) << ' ' << (i & 2 ? half : -half) << ' ' << (i & 4 ? half : -half) << '\n';
  // Outward-facing quads split into triangles, 1-based.
  const int quads[6][4] = {{1, 3, 4, 2}, {5, 6, 8, 7}, {1, 2, 6, 5}, {3, 7, 8, 4}, {1, 5, 7, 3}, {2, 4, 8, 6}};
  for (const auto& q : quads) {
    f << "f " << q[0] << ' ' << q[1] << ' ' << q[2] << '\n';
    f << "f " << q[0] << ' ' << q[2] << ' ' << q[3] << '\n';
  }
}

voxcore::ProbVolume random_volume(std::mt19937_64& rng, voxcore::GridDims dims) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  voxcore::ProbVolume v(dims, voxcore::Space::prob);
  for (auto& x : v.data) x = double(u(rng));
  v.transform = {Vec3(1.25, -3.5, 7.0), 412.5, std::max({dims.w, dims.h, dims.d})};
  return v;
}

const fs::path kFixture = fs::path(BODYVOX_DATA_DIR) / "fixture";

}  // namespace

TEST_CASE("surface error: identical meshes, constant offset, loop oracle") {
  std::mt19937_64 rng(11);
  const auto gt = random_points(rng, 300);
  CHECK(surface_error(gt, gt) == 0.0);

  auto shifted = gt;
  const Vec3 dir = Vec3(1.0, -2.0, 0.5).normalized();
  for (auto& p : shifted) p += 10.0 * dir;
  CHECK(surface_error(shifted, gt) == doctest::Approx(10.0).epsilon(1e-12));

  const auto fit = random_points(rng, 300);
  double oracle = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Vec3 d = fit[i] - gt[i];
    oracle += std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
  }
  oracle /= double(gt.size());
  CHECK(std::abs(surface_error(fit, gt) - oracle) <= 1e-12 * oracle);

  CHECK_THROWS_AS(surface_error(std::span(fit).first(10), gt), Error);
}

TEST_CASE("landmark error over a vertex subset") {
  std::mt19937_64 rng(12);
  const auto gt = random_points(rng, 200);
  const std::vector<int> lm = {0, 7, 19, 101, 199};
  CHECK(landmark_error(gt, gt, lm) == 0.0);

  auto fit = gt;
  for (auto& p : fit) p.z() += 5.0;
  CHECK(landmark_error(fit, gt, lm) == doctest::Approx(5.0).epsilon(1e-12));

  // Only listed vertices count.
  const auto noisy = random_points(rng, 200);
  auto mixed = gt;
  for (std::size_t i = 0; i < mixed.size(); ++i)
    if (std::find(lm.begin(), lm.end(), int(i)) == lm.end()) mixed[i] = noisy[i];
  CHECK(landmark_error(mixed, gt, lm) == 0.0);

  const std::vector<int> bad = {200};
  CHECK_THROWS_AS(landmark_error(gt, gt, bad), Error);
}

TEST_CASE("per-vertex error averages trials") {
  std::mt19937_64 rng(13);
  const auto gt = random_points(rng, 50);
  std::vector<MeshPair> same = {{gt, gt}};
  for (double e : per_vertex_error(same)) CHECK(e == 0.0);

  auto up = gt, down = gt;
  for (auto& p : up) p.x() += 4.0;
  for (auto& p : down) p.y() -= 2.0;
  std::vector<MeshPair> two = {{up, gt}, {down, gt}};
  for (double e : per_vertex_error(two)) CHECK(e == doctest::Approx(3.0).epsilon(1e-12));

  const auto a = random_points(rng, 50), b = random_points(rng, 50);
  std::vector<MeshPair> mixed = {{a, gt}, {b, gt}};
  const auto err = per_vertex_error(mixed);
  for (std::size_t i = 0; i < gt.size(); ++i)
    CHECK(err[i] == doctest::Approx(0.5 * ((a[i] - gt[i]).norm() + (b[i] - gt[i]).norm())).epsilon(1e-12));
}

TEST_CASE("error map OBJ carries colors and values") {
  const auto dir = scratch("errmap");
  voxcore::TriMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  mesh.faces = {{0, 1, 2}};
  const std::vector<double> err = {0.0, 5.0, 10.0};
  write_error_map(dir / "e.obj", mesh, err);
  std::ifstream in(dir / "e.obj");
  std::string line;
  std::vector<std::array<double, 6>> verts;
  std::vector<double> values;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      std::array<double, 6> v{};
      for (auto& x : v) ss >> x;
      verts.push_back(v);
    } else if (tag == "#" && line.rfind("# e ", 0) == 0) {
      double e;
      ss >> tag >> e;
      values.push_back(e);
    }
  }
  REQUIRE(verts.size() == 3);
  REQUIRE(values == err);
  // Zero error is blue, the maximum red.
  CHECK(verts[0][3] == 0.0);
  CHECK(verts[0][5] == 1.0);
  CHECK(verts[2][3] == 1.0);
  CHECK(verts[2][5] == 0.0);
  CHECK(verts[1][4] == 1.0);
}

TEST_CASE("point set distance is symmetric and zero on equal sets") {
  std::mt19937_64 rng(14);
  const auto a = random_points(rng, 100), b = random_points(rng, 80);
  CHECK(point_set_distance(a, a) == 0.0);
  CHECK(point_set_distance(a, b) == doctest::Approx(point_set_distance(b, a)).epsilon(1e-12));
  auto c = a;
  for (auto& p : c) p.x() += 0.01;  // well below the point spacing, so each twin stays nearest
  CHECK(point_set_distance(a, c) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("extreme-shape subsets") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<double> d(507);
  for (auto& x : d) x = u(rng);

  const auto s10 = build_subsets(d, 10.0), s20 = build_subsets(d, 20.0);
  CHECK(s10.size() == 51);
  CHECK(s20.size() == 102);
  CHECK(std::is_sorted(s10.begin(), s10.end()));
  CHECK(std::includes(s20.begin(), s20.end(), s10.begin(), s10.end()));

  // Every member is at least as far as every non-member.
  double min_in = 1e300, max_out = -1e300;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (std::binary_search(s10.begin(), s10.end(), i))
      min_in = std::min(min_in, d[i]);
    else
      max_out = std::max(max_out, d[i]);
  }
  CHECK(min_in >= max_out);

  // Size from a sorted-list nearest-rank oracle.
  for (int n : {1, 7, 30, 99, 100, 507}) {
    for (double p : {10.0, 20.0, 50.0, 100.0}) {
      std::vector<double> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = u(rng);
      auto sorted = v;
      std::sort(sorted.begin(), sorted.end());
      int r = 1;  // smallest rank whose cumulative share reaches 100 - p
      while (100.0 * r < (100.0 - p) * n) ++r;
      const double cut = sorted[std::size_t(r - 1)];
      const auto s = build_subsets(v, p);
      CHECK(s.size() == std::size_t(std::count_if(v.begin(), v.end(), [&](double x) { return x >= cut; })));
    }
  }

  // Ties go to the lower index.
  const std::vector<double> flat(40, 3.0);
  const auto t = build_subsets(flat, 10.0);
  CHECK(t == std::vector<std::size_t>{0, 1, 2, 3, 4});

  CHECK_THROWS_AS(build_subsets(d, 0.0), Error);
  CHECK_THROWS_AS(build_subsets(d, 101.0), Error);
}

TEST_CASE("raw volume round trip is bit exact") {
  std::mt19937_64 rng(16);
  const voxcore::GridDims dims{5, 7, 3};
  const auto vol = random_volume(rng, dims);
  std::stringstream ss;
  write_raw_volume(ss, vol);
  const auto back = read_raw_volume(ss);
  CHECK(back.dims == dims);
  CHECK(back.space == vol.space);
  CHECK(back.data == vol.data);
  CHECK(back.transform.translate == vol.transform.translate);
  CHECK(back.transform.scale == vol.transform.scale);
  CHECK(back.transform.longest == vol.transform.longest);

  // Payload order is y fastest: the second float is cell (0, 1, 0).
  std::stringstream s2;
  write_raw_volume(s2, vol);
  std::string header;
  std::getline(s2, header);
  float first[2];
  s2.read(reinterpret_cast<char*>(first), sizeof first);
  CHECK(double(first[1]) == vol.at(0, 1, 0));
  const auto h = nlohmann::json::parse(header);
  CHECK(h.at("dims") == nlohmann::json::array({5, 7, 3}));
}

TEST_CASE("raw volume errors") {
  std::mt19937_64 rng(17);
  const auto vol = random_volume(rng, {4, 4, 4});
  std::stringstream ss;
  write_raw_volume(ss, vol);
  const std::string full = ss.str();

  auto code_of = [](const std::string& bytes) {
    std::istringstream in(bytes);
    try {
      read_raw_volume(in);
    } catch (const Error& e) {
      return e.code();
    }
    FAIL("no error");
    return ErrorCode::io;
  };
  CHECK(code_of(full.substr(0, full.size() - 3)) == ErrorCode::truncated_payload);
  CHECK(code_of(full + "x") == ErrorCode::malformed_payload);
  CHECK(code_of("not json\n") == ErrorCode::malformed_header);
  CHECK(code_of("") == ErrorCode::malformed_header);

  const auto nl = full.find('\n');
  auto header = nlohmann::json::parse(full.substr(0, nl));
  header["order"] = "x-fastest";
  CHECK(code_of(header.dump() + full.substr(nl)) == ErrorCode::malformed_header);

  // A probability outside [0, 1].
  auto bad = vol;
  bad.data[5] = 2.0;
  std::stringstream sb;
  write_raw_volume(sb, bad);
  CHECK(code_of(sb.str()) == ErrorCode::malformed_payload);

  auto nan = vol;
  nan.data[0] = std::nan("");
  std::stringstream sn;
  write_raw_volume(sn, nan);
  CHECK(code_of(sn.str()) == ErrorCode::non_finite);
}

TEST_CASE("part IOUs against a counting oracle") {
  std::mt19937_64 rng(18);
  const voxcore::GridDims dims{6, 6, 6};
  voxcore::ProbVolume a(dims, voxcore::Space::label), b(dims, voxcore::Space::label);
  std::uniform_int_distribution<int> lab(0, 5);  // class 6 stays absent
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = lab(rng);
    b.data[i] = rng() % 3 == 0 ? lab(rng) : a.data[i];
  }
  const auto ious = part_ious(a, b);
  for (int c = 0; c < voxcore::kNumPartClasses; ++c) {
    int in = 0, un = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const bool pa = int(a.data[i]) == c, pb = int(b.data[i]) == c;
      in += pa && pb;
      un += pa || pb;
    }
    CHECK(ious[std::size_t(c)] == doctest::Approx(un ? double(in) / un : 1.0).epsilon(1e-15));
  }
  CHECK(ious[6] == 1.0);
  for (double x : part_ious(a, a)) CHECK(x == 1.0);
  CHECK_THROWS_AS(part_ious(a, voxcore::ProbVolume({6, 6, 5}, voxcore::Space::label)), Error);
}

TEST_CASE("aggregate does not depend on report order") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<MetricReport> reports(23);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto& r = reports[i];
    r.voxel_iou = u(rng);
    r.front = {u(rng), u(rng), u(rng)};
    r.side = {u(rng), u(rng), u(rng)};
    if (i % 2 == 0) r.surface_error_mm = 100.0 * u(rng);
    r.counts.voxels_pred = i;
  }
  const auto ref = aggregate(reports);
  CHECK(ref.counts.samples == reports.size());
  double oracle = 0.0;
  int n = 0;
  for (const auto& r : reports)
    if (r.surface_error_mm) oracle += *r.surface_error_mm, ++n;
  CHECK(*ref.surface_error_mm == doctest::Approx(oracle / n).epsilon(1e-12));
  CHECK(!ref.landmark_error_mm);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(reports.begin(), reports.end(), rng);
    const auto a = aggregate(reports);
    CHECK(report_to_json(a) == report_to_json(ref));
  }
}

TEST_CASE("metric report JSON round trip") {
  MetricReport r;
  r.voxel_iou = 0.8125;
  r.front = {0.9, 0.95, 0.99};
  r.side = {0.7, 0.8, 0.97};
  r.surface_error_mm = 13.5;
  r.part_iou = std::array<double, kPartIouCount>{1, 0.5, 0.25, 0.125, 0.1, 0.2, 0.3, 0.6};
  r.counts = {100, 120, 6890, 91, 1};
  const auto back = report_from_json(report_to_json(r));
  CHECK(report_to_json(back) == report_to_json(r));
  CHECK(!back.landmark_error_mm);
  CHECK(back.part_iou == r.part_iou);
  CHECK_THROWS_AS(report_from_json("{\"voxel_iou\": 1}"), Error);
}

TEST_CASE("config parsing") {
  const Config def;
  const auto same = config_from_json("{}");
  CHECK(config_to_json(same) == config_to_json(def));
  CHECK(config_to_json(config_from_json(config_to_json(def))) == config_to_json(def));

  const auto c = config_from_json(R"({"fit": {"max_outer": 7, "solver": "lm"}, "seed": 9})");
  CHECK(c.fit.max_outer == 7);
  CHECK(c.fit.lambda == def.fit.lambda);
  CHECK(c.seed == 9);
  CHECK(fit_options(c).solver == fitkit::Solver::lm);

  auto code_of = [](const char* text) {
    try {
      config_from_json(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io;
  };
  CHECK(code_of(R"({"fit": {"max_outr": 7}})") == ErrorCode::malformed_payload);
  CHECK(code_of(R"({"extra": 1})") == ErrorCode::malformed_payload);
  CHECK(code_of(R"({"voxel": {"fill_ratio": 1.5}})") == ErrorCode::malformed_payload);
  CHECK(code_of(R"({"train": {"voxel_res": 48}})") == ErrorCode::malformed_payload);
  CHECK(code_of("[1,2]") == ErrorCode::malformed_payload);
}

TEST_CASE("CLI exit codes") {
  const auto dir = scratch("cli");
  SUBCASE("usage") {
    const auto r = cli({"voxelize", "--no-such-flag"});
    CHECK(r.code == exit_usage);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(cli({}).code == exit_usage);
    CHECK(cli({"frobnicate"}).code == exit_usage);
  }
  SUBCASE("voxelize then self IOU") {
    write_cube_obj(dir / "cube.obj", 1.0);
    const auto vox = cli({"voxelize", (dir / "cube.obj").string(), "--res", "16", "-o", (dir / "cube.binvox").string()});
    REQUIRE(vox.code == exit_ok);
    const auto ev = cli({"eval", (dir / "cube.binvox").string(), "--iou", "self", "-o", (dir / "m.json").string()});
    REQUIRE(ev.code == exit_ok);
    const auto m = report_from_json(ev.out);
    CHECK(m.voxel_iou == 1.0);
    CHECK(m.counts.voxels_pred > 0);
    std::ifstream f(dir / "m.json");
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(report_from_json(ss.str()).voxel_iou == 1.0);
  }
  SUBCASE("bad data") {
    {
      std::ofstream f(dir / "junk.raw");
      f << "{\"dims\": [2, 2, 2]}\n";
    }
    CHECK(cli({"eval", (dir / "junk.raw").string(), "--iou", "self"}).code == exit_data);
    {
      std::ofstream f(dir / "broken.obj");
      f << "v 0 0 0\nf 1 2 3\n";
    }
    CHECK(cli({"voxelize", (dir / "broken.obj").string(), "-o", (dir / "x.binvox").string()}).code == exit_data);
  }
  SUBCASE("fit on the shipped fixture converges") {
    const auto out = dir / "fit";
    const auto r = cli({"fit", "chamfer", "--volume", (kFixture / "volume.raw").string(), "--joints",
                        (kFixture / "joints.json").string(), "--init", (kFixture / "init_params.json").string(), "-o",
                        out.string()});
    CHECK(r.code == exit_ok);
    std::ifstream f(out.string() + ".json");
    REQUIRE(f);
    const auto j = nlohmann::json::parse(f);
    CHECK(j.at("converged") == true);
    CHECK(fs::exists(out.string() + ".obj"));

    // The fitted result feeds straight into the mesh metrics.
    const auto ev = cli({"eval", (kFixture / "volume.raw").string(), "--iou", "self", "--fit-params",
                         out.string() + ".json", "--gt-params", (kFixture / "gt_params.json").string()});
    REQUIRE(ev.code == exit_ok);
    const auto m = report_from_json(ev.out);
    REQUIRE(m.surface_error_mm);
    CHECK(std::isfinite(*m.surface_error_mm));
    CHECK(m.counts.landmarks > 0);
  }
  SUBCASE("not converged maps to its own exit code") {
    {
      std::ofstream f(dir / "tight.json");
      f << R"({"fit": {"max_outer": 1}})";
    }
    const auto r = cli({"fit", "chamfer", "--config", (dir / "tight.json").string(), "--volume",
                        (kFixture / "volume.raw").string(), "--joints", (kFixture / "joints.json").string(), "-o",
                        (dir / "f1").string()});
    CHECK(r.code == exit_not_converged);
  }
}

TEST_CASE("subsets command agrees with the library") {
  const auto dir = scratch("subsets");
  std::vector<double> d(30);
  std::iota(d.begin(), d.end(), 0.0);
  std::reverse(d.begin(), d.end());
  {
    std::ofstream f(dir / "d.json");
    f << nlohmann::json(d).dump();
  }
  const auto r = cli({"subsets", (dir / "d.json").string(), "--p", "10,20", "-o", (dir / "s.json").string()});
  REQUIRE(r.code == exit_ok);
  std::ifstream f(dir / "s.json");
  const auto j = nlohmann::json::parse(f);
  // 90th percentile of 30 is rank 27, so four samples reach it; 80th is rank 24.
  CHECK(j.at("s10") == nlohmann::json::array({0, 1, 2, 3}));
  CHECK(j.at("s20") == nlohmann::json::array({0, 1, 2, 3, 4, 5, 6}));
}
