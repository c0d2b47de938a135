#include "bodyvox/bodymodel.hpp"
#include "bodyvox/isosurface.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bodyvox::bodymodel {

namespace {

// Tapered capsule, optionally flattened along z. The distance is approximate
// away from the surface, which is all the meshing and skinning need.
struct Limb {
  Vec3 a, b;
  double ra, rb;
  double z_scale;
  int owner;
  int part;

  double axis_t(const Vec3& p) const {
    const Vec3 ab = b - a;
    return std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  }
  double sdf(const Vec3& p) const {
    const double t = axis_t(p);
    Vec3 d = p - (a + t * (b - a));
    d.z() /= z_scale;
    return (d.norm() - (ra + t * (rb - ra))) * std::min(1.0, z_scale);
  }
  // Offset from the nearest point on the (unflattened) axis.
  Vec3 radial(const Vec3& p) const { return p - (a + axis_t(p) * (b - a)); }
};

double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

constexpr double kShoulderX = 190.0;
constexpr double kHipX = 100.0;
constexpr double kHipY = -70.0;

std::array<Vec3, kNumJoints> preset_joints() {
  std::array<Vec3, kNumJoints> j;
  j[pelvis] = {0, 0, 0};
  j[thorax] = {0, 380, 0};
  j[upper_neck] = {0, 540, 0};
  j[head_top] = {0, 780, 0};
  for (int s : {-1, 1}) {
    const bool right = s < 0;
    j[right ? r_hip : l_hip] = {s * kHipX, kHipY, 0};
    j[right ? r_knee : l_knee] = {s * kHipX, -480, 0};
    j[right ? r_ankle : l_ankle] = {s * kHipX, -880, 0};
    j[right ? r_shoulder : l_shoulder] = {s * kShoulderX, 440, 0};
    j[right ? r_elbow : l_elbow] = {s * 460.0, 440, 0};
    j[right ? r_wrist : l_wrist] = {s * 700.0, 440, 0};
  }
  return j;
}

std::vector<Limb> limbs(const std::array<Vec3, kNumJoints>& j) {
  std::vector<Limb> out = {
      {{0, -60, 0}, {0, 200, 0}, 130, 130, 0.7, pelvis, torso},
      {{0, 200, 0}, {0, 400, 0}, 140, 140, 0.7, thorax, torso},
      {{-170, 430, 0}, {170, 430, 0}, 70, 70, 1.0, thorax, torso},
      {{0, 430, 0}, {0, 580, 0}, 50, 50, 1.0, thorax, head},
      {{0, 625, 0}, {0, 695, 0}, 95, 90, 1.0, upper_neck, head},
  };
  for (int s : {-1, 1}) {
    const bool right = s < 0;
    const int leg = right ? right_leg : left_leg;
    const int arm = right ? right_arm : left_arm;
    const int hip = right ? r_hip : l_hip, knee = right ? r_knee : l_knee, ankle = right ? r_ankle : l_ankle;
    const int sh = right ? r_shoulder : l_shoulder, el = right ? r_elbow : l_elbow, wr = right ? r_wrist : l_wrist;
    out.push_back({j[hip], j[knee], 80, 58, 1.0, hip, leg});
    out.push_back({j[knee], j[ankle], 55, 42, 1.0, knee, leg});
    out.push_back({j[ankle], j[ankle] + Vec3(0, -25, 130), 42, 34, 1.0, ankle, leg});
    out.push_back({j[sh], j[el], 52, 42, 1.0, sh, arm});
    out.push_back({j[el], j[wr], 40, 32, 1.0, el, arm});
    out.push_back({j[wr], j[wr] + Vec3(s * 110.0, 0, 0), 34, 28, 0.6, wr, arm});
  }
  return out;
}

constexpr double kBlend = 30.0;  // smooth-union radius, mm

double body_sdf(const std::vector<Limb>& ls, const Vec3& p) {
  double d = ls.front().sdf(p);
  for (std::size_t i = 1; i < ls.size(); ++i) d = smooth_min(d, ls[i].sdf(p), kBlend);
  return d;
}

bool is_arm(int j) { return j == r_shoulder || j == r_elbow || j == r_wrist || j == l_shoulder || j == l_elbow || j == l_wrist; }
bool is_leg(int j) { return j == r_hip || j == r_knee || j == r_ankle || j == l_hip || j == l_knee || j == l_ankle; }
bool is_trunk(int j) { return j == pelvis || j == thorax; }
double side_x(int j) { return (j == r_shoulder || j == r_elbow || j == r_wrist) ? -kShoulderX : kShoulderX; }

// Displacement of a rest point under one unit of shape coefficient k when the
// point moves with joint j. The basis blends these by skinning weight.
Vec3 shape_offset(int k, int j, const Vec3& p, const Vec3& radial, const std::array<Vec3, kNumJoints>& preset) {
  switch (k) {
    case 0: return {0, 0.05 * p.y(), 0};
    case 1: return 0.03 * radial;
    case 2:
      if (is_trunk(j)) return {0.06 * p.x(), 0, 0};
      if (is_arm(j)) return {0.06 * side_x(j), 0, 0};
      return Vec3::Zero();
    case 3: return is_arm(j) ? Vec3(0.06 * (p.x() - side_x(j)), 0, 0) : Vec3::Zero();
    case 4: return is_leg(j) ? Vec3(0, 0.06 * (p.y() - kHipY), 0) : Vec3::Zero();
    case 5: return is_arm(j) ? Vec3(0.05 * radial) : Vec3::Zero();
    case 6: return is_leg(j) ? Vec3(0.04 * radial) : Vec3::Zero();
    case 7: return j == upper_neck ? Vec3(0.06 * (p - preset[upper_neck])) : Vec3::Zero();
    case 8:
      if (is_arm(j)) return {0.05 * side_x(j), 0, 0};
      if (j == thorax) return {0.05 * p.x() * std::clamp((p.y() - 200.0) / 240.0, 0.0, 1.0), 0, 0};
      return Vec3::Zero();
    case 9: return is_trunk(j) ? Vec3(0, 0, 0.08 * p.z()) : Vec3::Zero();
    default: return Vec3::Zero();
  }
}

}  // namespace

BodyTemplate make_synthetic_template(std::uint64_t seed, const TemplateOptions& opts) {
  require(opts.cell_mm > 1.0 && std::isfinite(opts.cell_mm), ErrorCode::invalid_argument,
          "template cell size must exceed 1 mm");
  const auto preset = preset_joints();
  const auto ls = limbs(preset);

  // Mesh the implicit body.
  voxcore::Aabb box;
  for (const auto& l : ls) {
    const double r = std::max(l.ra, l.rb);
    const Vec3 pad = Vec3::Constant(r);
    for (const Vec3& e : {l.a, l.b}) {
      box.extend(e - pad);
      box.extend(e + pad);
    }
  }
  const double cell = opts.cell_mm;
  const Vec3 lo = box.lo - Vec3::Constant(2.0 * cell);
  const voxcore::GridDims dims{int(std::ceil(box.extent().x() / cell)) + 4, int(std::ceil(box.extent().y() / cell)) + 4,
                               int(std::ceil(box.extent().z() / cell)) + 4};
  std::vector<double> field(dims.count());
  for (int x = 0; x < dims.w; ++x)
    for (int y = 0; y < dims.h; ++y)
      for (int z = 0; z < dims.d; ++z) {
        const Vec3 p = lo + cell * Vec3(x + 0.5, y + 0.5, z + 0.5);
        double f = -body_sdf(ls, p);
        // Keep vertices off lattice points so no triangle degenerates.
        if (std::abs(f) < 1e-3 * cell) f = -1e-3 * cell;
        field[dims.index(x, y, z)] = f;
      }
  const auto surf = isosurface::extract(dims, field, 0.0, -1e9);

  BodyTemplate t;
  t.faces = surf.faces;
  t.vertices.reserve(surf.vertices.size());
  for (const auto& g : surf.vertices) t.vertices.push_back(lo + cell * g);
  const std::size_t n = t.vertices.size();

  t.parent = {r_knee, r_hip, pelvis, pelvis, l_hip, l_knee, -1, pelvis,
              thorax, upper_neck, r_elbow, r_shoulder, thorax, thorax, l_shoulder, l_elbow};
  t.root = pelvis;

  // Part labels and skinning from per-limb distances.
  constexpr double kSkinScale = 15.0;
  t.labels.resize(n);
  t.skin.resize(n);
  std::vector<Vec3> radial_of(n * kNumJoints, Vec3::Zero());
  for (std::size_t v = 0; v < n; ++v) {
    const Vec3& p = t.vertices[v];
    std::array<double, kNumJoints> dist;
    dist.fill(std::numeric_limits<double>::infinity());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& l : ls) {
      const double d = l.sdf(p);
      if (d < best) {
        best = d;
        t.labels[v] = l.part;
      }
      if (d < dist[std::size_t(l.owner)]) {
        dist[std::size_t(l.owner)] = d;
        radial_of[v * kNumJoints + std::size_t(l.owner)] = l.radial(p);
      }
    }
    std::array<int, kNumJoints> idx;
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return dist[std::size_t(a)] < dist[std::size_t(b)]; });
    SkinWeights& s = t.skin[v];
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const int j = idx[std::size_t(k)];
      const double d = dist[std::size_t(j)];
      s.joint[std::size_t(k)] = j;
      s.weight[std::size_t(k)] = std::isfinite(d) ? std::exp(-(d - best) / kSkinScale) : 0.0;
      if (s.weight[std::size_t(k)] < 1e-8) s.weight[std::size_t(k)] = 0.0;
      sum += s.weight[std::size_t(k)];
    }
    for (auto& w : s.weight) w /= sum;
  }

  // Shape basis, rounded to float so the on-disk form round-trips exactly.
  t.basis = Eigen::MatrixXd::Zero(Eigen::Index(3 * n), kNumShape);
  for (std::size_t v = 0; v < n; ++v) {
    const SkinWeights& s = t.skin[v];
    for (int k = 0; k < kNumShape; ++k) {
      Vec3 d = Vec3::Zero();
      for (int i = 0; i < 4; ++i) {
        const int j = s.joint[std::size_t(i)];
        if (s.weight[std::size_t(i)] == 0.0) continue;
        d += s.weight[std::size_t(i)] *
             shape_offset(k, j, t.vertices[v], radial_of[v * kNumJoints + std::size_t(j)], preset);
      }
      for (int c = 0; c < 3; ++c) t.basis(Eigen::Index(3 * v) + c, k) = d[c];
    }
  }

  t.basis = t.basis.cast<float>().cast<double>().eval();

  // Regressor: uniform weights over the surface band nearest each preset joint.
  constexpr double kBand = 20.0;
  t.regressor.assign(kNumJoints, {});
  std::vector<std::pair<double, int>> near(n);
  for (int j = 0; j < kNumJoints; ++j) {
    for (std::size_t v = 0; v < n; ++v) near[v] = {(t.vertices[v] - preset[std::size_t(j)]).norm(), int(v)};
    std::sort(near.begin(), near.end());
    std::size_t count = 0;
    while (count < n && (count < 4 || near[count].first <= near.front().first + kBand)) ++count;
    auto& row = t.regressor[std::size_t(j)];
    for (std::size_t i = 0; i < count; ++i) row.emplace_back(near[i].second, 1.0 / double(count));
    std::sort(row.begin(), row.end());
  }

  // Landmarks stratified by part, proportional to part vertex counts.
  std::mt19937_64 rng(seed);
  std::array<std::vector<int>, voxcore::kNumParts + 1> by_part;
  for (std::size_t v = 0; v < n; ++v) by_part[std::size_t(t.labels[v])].push_back(int(v));
  std::array<std::size_t, voxcore::kNumParts + 1> quota{};
  std::size_t assigned = 0;
  for (int p = 1; p <= voxcore::kNumParts; ++p) {
    quota[std::size_t(p)] = std::min(by_part[std::size_t(p)].size(),
                                     std::max<std::size_t>(5, kNumLandmarks * by_part[std::size_t(p)].size() / n));
    assigned += quota[std::size_t(p)];
  }
  const int largest = int(std::max_element(by_part.begin(), by_part.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); }) -
                          by_part.begin());
  require(assigned <= std::size_t(kNumLandmarks), ErrorCode::degenerate_input, "too few vertices for landmarks");
  quota[std::size_t(largest)] += kNumLandmarks - assigned;
  for (int p = 1; p <= voxcore::kNumParts; ++p) {
    auto& pool = by_part[std::size_t(p)];
    // Partial Fisher-Yates with explicit index draws keeps the choice portable.
    for (std::size_t i = 0; i < quota[std::size_t(p)]; ++i) {
      const std::size_t k = i + std::size_t(rng() % (pool.size() - i));
      std::swap(pool[i], pool[k]);
      t.landmarks.push_back(pool[i]);
    }
  }
  t.validate();
  return t;
}

}  // namespace bodyvox::bodymodel
