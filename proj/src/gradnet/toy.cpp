#include "bodyvox/bodymodel.hpp"
#include "bodyvox/gradnet.hpp"
#include "bodyvox/heatfields.hpp"
#include "bodyvox/projection.hpp"
#include "bodyvox/voxcore.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bodyvox::gradnet {

namespace {

constexpr int kHeat3dChannels = kJoints * kDepthBins;
constexpr int kWidthA = 12, kWidthB = 12, kWidthC = 16;

// Label of the first part hit along +z per (x, y).
std::vector<int> front_parts(const voxcore::ProbVolume& parts) {
  const auto& d = parts.dims;
  std::vector<int> out(std::size_t(d.w) * std::size_t(d.h), 0);
  for (int y = 0; y < d.h; ++y)
    for (int x = 0; x < d.w; ++x)
      for (int z = 0; z < d.d; ++z) {
        const int l = int(parts.at(x, y, z));
        if (l > 0) {
          out[std::size_t(y) * std::size_t(d.w) + std::size_t(x)] = l;
          break;
        }
      }
  return out;
}

// Majority label over each f x f block, ties to the lower label.
std::vector<int> downsample_labels(const std::vector<int>& labels, int res, int f) {
  const int out_res = res / f;
  std::vector<int> out(std::size_t(out_res) * std::size_t(out_res));
  for (int r = 0; r < out_res; ++r)
    for (int c = 0; c < out_res; ++c) {
      std::array<int, kSegClasses> votes{};
      for (int a = 0; a < f; ++a)
        for (int b = 0; b < f; ++b) ++votes[std::size_t(labels[std::size_t(f * r + a) * std::size_t(res) + std::size_t(f * c + b)])];
      out[std::size_t(r) * std::size_t(out_res) + std::size_t(c)] =
          int(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  return out;
}

// Max over each f x f block.
std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, int res, int f) {
  const int out_res = res / f;
  std::vector<std::uint8_t> out(std::size_t(out_res) * std::size_t(out_res), 0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      out[std::size_t(y / f) * std::size_t(out_res) + std::size_t(x / f)] |= mask[std::size_t(y) * std::size_t(res) + std::size_t(x)];
  return out;
}

void check_res(int res) {
  require(res == 32 || res == 64, ErrorCode::invalid_argument, "toy voxel resolution must be 32 or 64");
}

}  // namespace

std::vector<ToySample> make_toy_set(int n, std::uint64_t seed, const ToyDataConfig& cfg) {
  require(n >= 0, ErrorCode::invalid_argument, "sample count must be non-negative");
  check_res(cfg.voxel_res);
  const int res = cfg.voxel_res;
  const int heat_f = res / kHeat;
  const auto model = bodymodel::make_synthetic_template(1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<ToySample> out;
  out.reserve(std::size_t(n));
  const heatfields::DepthQuantizer quant(850.0, kDepthBins);
  heatfields::HeatmapConfig hcfg;
  hcfg.resolution = kHeat;

  for (int i = 0; i < n; ++i) {
    bodymodel::BodyParams p;
    for (auto& t : p.theta) t = cfg.pose_sigma * Vec3(normal(rng), normal(rng), normal(rng));
    for (int k = 0; k < bodymodel::kNumShape; ++k) p.beta[k] = cfg.shape_sigma * normal(rng);
    const bodymodel::PosedBody body(model, p);
    auto mesh = model.mesh();
    mesh.vertices = body.vertices();

    voxcore::AlignConfig align;
    align.resolution = res;
    align.root = body.joints()[bodymodel::pelvis];
    const auto frame = voxcore::make_frame(mesh, align);
    const auto grid = voxcore::voxelize(mesh, frame);
    const auto parts = voxcore::voxelize_parts(mesh, frame);
    const auto& tf = grid.transform;

    ToySample s;
    s.voxel_res = res;
    const auto r = std::size_t(res);
    s.voxels.resize(r * r * r);
    for (int z = 0; z < res; ++z)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          s.voxels[(std::size_t(z) * r + std::size_t(y)) * r + std::size_t(x)] = grid.at(x, y, z) ? 1 : 0;
    const auto fv = projection::project(grid, projection::View::front);
    const auto sv = projection::project(grid, projection::View::side);
    for (double v : fv.data) s.front.push_back(v >= 0.5 ? 1 : 0);
    for (double v : sv.data) s.side.push_back(v >= 0.5 ? 1 : 0);

    const auto labels = front_parts(parts);
    s.segm = downsample_labels(labels, res, heat_f);
    const int in_f = res / kImage;
    const auto sil = downsample_mask(s.front, res, in_f);
    const auto in_labels = downsample_labels(labels, res, in_f);
    s.input = Tensor({kInputChannels, kImage, kImage});
    const std::size_t plane = std::size_t(kImage) * kImage;
    for (std::size_t px = 0; px < plane; ++px) {
      s.input.data[px] = double(sil[px]) + cfg.input_noise * normal(rng);
      s.input.data[plane + px] = double(in_labels[px]) / 6.0 + cfg.input_noise * normal(rng);
      s.input.data[2 * plane + px] = normal(rng);
    }

    // Heatmap cell c spans grid cells [f c, f c + f).
    heatfields::Skeleton cells, mm;
    for (const auto& j : body.joints()) {
      const Vec3 g = tf.to_grid(j);
      cells.joints.emplace_back(g.x() / heat_f - 0.5, g.y() / heat_f - 0.5, 0.0);
      mm.joints.push_back(j);
    }
    s.heat2d = heatfields::encode_2d(cells, kHeat, hcfg.sigma).data;
    const double mid = heat_f * (kHeat / 2 + 0.5);
    const Vec3 center = tf.to_model(Vec3(mid, mid, 0.0));
    const heatfields::HeatmapFrame hframe{heat_f * tf.cell_size(), Vec2(center.x(), center.y())};
    s.heat3d = heatfields::encode_3d(mm, quant, hcfg, hframe).data;
    out.push_back(std::move(s));
  }
  return out;
}

ToyPredictor::ToyPredictor(std::uint64_t seed, StageInputs shape_inputs, int voxel_res)
    : inputs_(shape_inputs), res_(voxel_res) {
  check_res(voxel_res);
  require(inputs_.any(), ErrorCode::invalid_argument, "the shape stage needs at least one input");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto add = [&](const std::string& name, std::vector<int> shape, int block, int fan_in) {
    Tensor t(std::move(shape));
    if (fan_in > 0)
      for (auto& v : t.data) v = normal(rng) / std::sqrt(double(fan_in));
    params_.names.push_back(name);
    params_.values.push_back(std::move(t));
    block_.push_back(block);
  };
  auto conv = [&](const std::string& name, int out, int in, int k, int block) {
    add(name + ".w", {out, in, k, k}, block, in * k * k);
    add(name + ".b", {out}, block, 0);
  };
  conv("a1", kWidthA, kInputChannels, 3, 0);
  conv("a2", kWidthA, kWidthA, 3, 0);
  conv("heat2d", kJoints, kWidthA, 1, 0);
  conv("segm", kSegClasses, kWidthA, 1, 0);
  conv("b1", kWidthB, kInputChannels + kJoints + kSegClasses, 3, 1);
  conv("heat3d", kHeat3dChannels, kWidthB, 1, 1);
  const int c_in = (inputs_.image ? kInputChannels : 0) + (inputs_.pose2d ? kJoints : 0) +
                   (inputs_.segm ? kSegClasses : 0) + (inputs_.pose3d ? kHeat3dChannels : 0);
  conv("c1", kWidthC, c_in, 1, 2);
  conv("c2", kWidthC, kWidthC, 3, 2);
  conv("c3", kHeat, kWidthC, 1, 2);
  add("c4.w", {1, 1, 3, 3, 3}, 2, 27);
  add("c4.b", {1}, 2, 0);
}

ToyOutputs ToyPredictor::forward(Tape& t, const ToySample& s, std::vector<Var>& leaves, int upto) const {
  require(upto >= 1 && upto <= 3, ErrorCode::invalid_argument, "forward depth must be 1, 2 or 3");
  leaves.clear();
  for (const auto& v : params_.values) leaves.push_back(t.leaf(v));
  auto p = [&](const char* name) { return leaves[std::size_t(params_.find(name))]; };
  auto conv = [&](Var x, const std::string& name) {
    return conv2d(t, x, p((name + ".w").c_str()), p((name + ".b").c_str()));
  };

  ToyOutputs out;
  const Var x = t.constant(s.input);
  const Var x_small = max_pool2d(t, x, 2);
  const bool need_predictions = upto < 3 || !gt_fields_;
  if (need_predictions) {
    const Var a1 = max_pool2d(t, gradnet::tanh(t, conv(x, "a1")), 2);
    const Var a2 = gradnet::tanh(t, conv(a1, "a2"));
    out.heat2d = conv(a2, "heat2d");
    out.segm = conv(a2, "segm");
  }
  if (upto >= 2 && need_predictions) {
    const std::array<Var, 3> in = {x_small, out.heat2d, out.segm};
    out.heat3d = conv(gradnet::tanh(t, conv(concat(t, in), "b1")), "heat3d");
  }
  if (upto < 3) return out;

  Var heat2d = out.heat2d, segm = out.segm, heat3d = out.heat3d;
  if (gt_fields_) {
    Tensor h2({kJoints, kHeat, kHeat});
    h2.data = s.heat2d;
    heat2d = t.constant(std::move(h2));
    Tensor onehot({kSegClasses, kHeat, kHeat});
    for (std::size_t i = 0; i < s.segm.size(); ++i)
      onehot.data[std::size_t(s.segm[i]) * s.segm.size() + i] = 1.0;
    segm = t.constant(std::move(onehot));
    Tensor h3({kHeat3dChannels, kHeat, kHeat});
    h3.data = s.heat3d;
    heat3d = t.constant(std::move(h3));
  }
  std::vector<Var> in;
  if (inputs_.image) in.push_back(x_small);
  if (inputs_.pose2d) in.push_back(heat2d);
  if (inputs_.segm) in.push_back(segm);
  if (inputs_.pose3d) in.push_back(heat3d);
  const Var c1 = gradnet::tanh(t, conv(concat(t, in), "c1"));
  const Var c2 = gradnet::tanh(t, conv(c1, "c2"));
  require(s.voxel_res == res_, ErrorCode::dim_mismatch, "sample and predictor voxel resolutions differ");
  const Var slabs = reshape(t, conv(c2, "c3"), {1, kHeat, kHeat, kHeat});
  out.voxels = reshape(t, conv3d(t, upsample(t, slabs, res_ / kHeat), p("c4.w"), p("c4.b")), {res_, res_, res_});
  return out;
}

}  // namespace bodyvox::gradnet
