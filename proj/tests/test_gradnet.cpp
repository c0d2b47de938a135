#include "bodyvox/gradnet.hpp"
#include "gradcases.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>

using namespace bodyvox;
using namespace bodyvox::gradnet;

using namespace testsupport;

namespace {

const std::vector<ToySample>& toy_six() {
  static const auto data = make_toy_set(6, 11);
  return data;
}

TrainConfig short_config(std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.iters = {4, 4, 4, 4, 8};
  cfg.balance_iters = 3;
  cfg.stage_balance_iters = 2;
  cfg.log_grad_every = 3;
  return cfg;
}

Tensor as_tensor(const std::vector<std::uint8_t>& v, std::vector<int> shape) {
  Tensor t(std::move(shape));
  std::copy(v.begin(), v.end(), t.data.begin());
  return t;
}

}  // namespace

TEST_CASE("closed-form derivatives and tie routing") {
  Tape t;
  const Var x = t.leaf(Tensor({1}, 0.0));
  const Var s = sigmoid(t, x);
  CHECK(t.value(s).data[0] == 0.5);
  t.backward(s);
  CHECK(t.grad(x)[0] == 0.25);

  Tape u;
  Tensor v({4});
  v.data = {1.0, 3.0, 3.0, 3.0};
  const Var a = u.leaf(v);
  u.backward(max_reduce(u, a, 0));
  CHECK(u.grad(a) == std::vector<double>{0, 1, 0, 0});

  Tape p;
  Tensor img({1, 2, 2}, 2.0);
  const Var b = p.leaf(img);
  p.backward(sum(p, max_pool2d(p, b, 2)));
  CHECK(p.grad(b) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("backward bookkeeping") {
  std::mt19937_64 rng(2);
  Tape t;
  const Var x = t.leaf(random_tensor(rng, {3}));
  const Var c = t.constant(random_tensor(rng, {3}));
  const Var y = add(t, gradnet::tanh(t, x), c);
  const Var l1 = sum(t, y);
  const Var l2 = sum(t, scale(t, y, 2.0));
  t.backward(l2);
  const auto g2 = t.grad(x);
  t.backward(l1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g2[i] == doctest::Approx(2.0 * t.grad(x)[i]).epsilon(1e-15));
  CHECK(std::all_of(t.grad(c).begin(), t.grad(c).end(), [](double g) { return g == 0.0; }));
  CHECK_THROWS_AS(t.backward(y), Error);
  CHECK_THROWS_AS(add(t, x, t.constant(Tensor({2}))), Error);
  CHECK_THROWS_AS(conv2d(t, t.constant(Tensor({1, 3, 3})), t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({1}))),
                  Error);
  CHECK_THROWS_AS(max_reduce(t, x, 1), Error);
  CHECK_THROWS_AS(reshape(t, x, {2}), Error);
}

TEST_CASE("every op against central differences") {
  std::mt19937_64 rng(17);
  for (const auto& op : op_cases()) {
    CAPTURE(op.name);
    for (int i = 0; i < 8; ++i) {
      auto [f, inputs] = op.make(rng);
      CHECK(gradcheck(f, inputs, rng) < 1e-4);
    }
  }
}

TEST_CASE("random three-layer network") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = uniform(rng, 2, 5), h1 = uniform(rng, 2, 6), h2 = uniform(rng, 2, 6), m = uniform(rng, 1, 4);
    const Builder net = [](Tape& t, const std::vector<Var>& v) {
      const Var a = gradnet::tanh(t, affine(t, v[0], v[1], v[2]));
      const Var b = sigmoid(t, affine(t, a, v[3], v[4]));
      return affine(t, b, v[5], v[6]);
    };
    std::vector<Tensor> in = {random_tensor(rng, {n}),     random_tensor(rng, {h1, n}), random_tensor(rng, {h1}),
                              random_tensor(rng, {h2, h1}), random_tensor(rng, {h2}),   random_tensor(rng, {m, h2}),
                              random_tensor(rng, {m})};
    CHECK(gradcheck(net, in, rng) < 1e-4);
  }
}

TEST_CASE("toy predictor gradient on sampled parameters") {
  const auto& s = toy_six()[0];
  ToyPredictor model(9);
  auto loss = [&](const ToyPredictor& m, std::vector<std::vector<double>>* grads) {
    Tape t;
    std::vector<Var> leaves;
    const auto out = m.forward(t, s, leaves, 3);
    // The max projections are left out: the upsampled volume has exact ties
    // along rays, where the max is not differentiable.
    const std::array<Var, 4> terms = {mse(t, out.heat2d, s.heat2d), softmax_ce(t, out.segm, s.segm),
                                      mse(t, out.heat3d, s.heat3d), bce_logits(t, out.voxels, s.voxels)};
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(t, total, scale(t, terms[i], 1e-3));
    if (grads) {
      t.backward(total);
      for (Var v : leaves) grads->push_back(t.grad(v));
    }
    return t.value(total).data[0];
  };
  std::vector<std::vector<double>> grads;
  loss(model, &grads);
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (std::size_t p = 0; p < model.params().values.size(); ++p) {
    auto& data = model.params().values[p].data;
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
      const double x0 = data[i], h = 1e-4;
      auto at = [&](double d) {
        data[i] = x0 + d;
        return loss(model, nullptr);
      };
      const double fd = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      data[i] = x0;
      worst = std::max(worst, testsupport::rel_err(grads[p][i], fd, 1e-5));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("toy data layout") {
  for (int res : {32, 64}) {
    CAPTURE(res);
    ToyDataConfig cfg;
    cfg.voxel_res = res;
    const auto data = make_toy_set(2, 3, cfg);
    REQUIRE(data.size() == 2);
    const auto r = std::size_t(res);
    for (const auto& s : data) {
      CHECK(s.voxel_res == res);
      CHECK(s.voxels.size() == r * r * r);
      CHECK(s.input.shape == std::vector<int>{kInputChannels, kImage, kImage});
      CHECK(s.heat2d.size() == std::size_t(kJoints * kHeat * kHeat));
      CHECK(s.heat3d.size() == std::size_t(kJoints * kDepthBins * kHeat * kHeat));
      CHECK(std::all_of(s.segm.begin(), s.segm.end(), [](int l) { return l >= 0 && l < kSegClasses; }));
      CHECK(std::count(s.voxels.begin(), s.voxels.end(), 1) > 0);
      // The loss-side projections of the voxel tensor reproduce the stored silhouettes.
      Tape t;
      const Var v = t.constant(as_tensor(s.voxels, {res, res, res}));
      const auto front = t.value(max_reduce(t, v, 0)).data;
      const auto side = t.value(max_reduce(t, v, 2)).data;
      for (std::size_t i = 0; i < r * r; ++i) {
        CHECK(front[i] == double(s.front[i]));
        CHECK(side[i] == double(s.side[i]));
      }
    }
    ToyPredictor m(1, {}, res);
    Tape t;
    std::vector<Var> leaves;
    CHECK(t.value(m.forward(t, data[0], leaves).voxels).shape == std::vector<int>{res, res, res});
    CHECK(m.params().count() <= 100000);
  }
  ToyDataConfig bad;
  bad.voxel_res = 48;
  CHECK_THROWS_AS(make_toy_set(1, 1, bad), Error);
  ToyPredictor m64(1, {}, 64);
  Tape t;
  std::vector<Var> leaves;
  CHECK_THROWS_AS(m64.forward(t, toy_six()[0], leaves), Error);
  CHECK_THROWS_AS(ToyPredictor(1, StageInputs{false, false, false, false}), Error);
}

TEST_CASE("zero learning rate leaves the trace constant") {
  auto cfg = short_config();
  cfg.lr = 0.0;
  ToyPredictor model(3);
  const auto before = model.params().flatten();
  TrainLog log;
  losskit::LossWeights w;
  train_stage(model, toy_six(), Stage::end_to_end, w, 6, cfg, log);
  REQUIRE(log.rows.size() == 6);
  for (const auto& row : log.rows) CHECK(row.combined == log.rows[0].combined);
  CHECK(model.params().flatten() == before);
}

TEST_CASE("staged training is deterministic and logs every stage") {
  const auto cfg = short_config();
  ToyPredictor a(3), b(3);
  const auto la = train_staged(a, toy_six(), cfg, true);
  const auto lb = train_staged(b, toy_six(), cfg, true);
  CHECK(a.params().flatten() == b.params().flatten());
  REQUIRE(la.rows.size() == lb.rows.size());
  CHECK(la.rows.size() == 4 * 4 + 8);
  for (std::size_t i = 0; i < la.rows.size(); ++i) {
    for (int k = 0; k < losskit::kNumTerms; ++k) {
      const double x = la.rows[i].terms[std::size_t(k)], y = lb.rows[i].terms[std::size_t(k)];
      CHECK((x == y || (std::isnan(x) && std::isnan(y))));
    }
    CHECK(la.rows[i].combined == lb.rows[i].combined);
  }
  CHECK(la.trajectory == lb.trajectory);
  CHECK(la.trajectory.size() == 8);
  REQUIRE(la.stages.size() == 5);
  for (int s = 0; s < 5; ++s) {
    const auto& st = la.stages[std::size_t(s)];
    CHECK(st.stage == s + 1);
    double total = 0.0;
    for (double w : st.weights.w) total += w;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 0; k < losskit::kNumTerms; ++k) {
      const auto active = stage_terms(Stage(s + 1));
      const bool on = std::find(active.begin(), active.end(), k) != active.end();
      CHECK(std::isnan(st.end[std::size_t(k)]) != on);
    }
  }
  // Only measured iterations carry gradient magnitudes.
  CHECK(std::isfinite(la.rows[0].grad_magnitude[losskit::j2d]));
  CHECK(std::isnan(la.rows[1].grad_magnitude[losskit::j2d]));
  ToyPredictor c(4);
  CHECK(train_staged(c, toy_six(), cfg).rows[0].combined != la.rows[0].combined);
}

TEST_CASE("scaling one loss rescales its weight and keeps the trajectory") {
  auto cfg = short_config();
  auto scaled = cfg;
  scaled.loss_scale[losskit::j2d] = 10.0;

  const ToyPredictor fresh(3);
  const auto base = measure_balance(fresh, toy_six(), Stage::end_to_end, 3, cfg);
  const auto with = measure_balance(fresh, toy_six(), Stage::end_to_end, 3, scaled);
  CHECK(with.raw[0] == doctest::Approx(0.1 * base.raw[0]).epsilon(1e-12));
  for (std::size_t k = 1; k < base.raw.size(); ++k) CHECK(with.raw[k] == base.raw[k]);

  ToyPredictor a(3), b(3);
  const auto la = train_staged(a, toy_six(), cfg, true);
  const auto lb = train_staged(b, toy_six(), scaled, true);
  REQUIRE(la.trajectory.size() == lb.trajectory.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < la.trajectory.size(); ++i)
    for (std::size_t j = 0; j < la.trajectory[i].size(); ++j)
      worst = std::max(worst, std::abs(la.trajectory[i][j] - lb.trajectory[i][j]));
  CHECK(worst < 1e-10);
}

TEST_CASE("balanced toy gradients have comparable magnitudes") {
  auto cfg = short_config();
  const ToyPredictor model(3);
  const auto data = make_toy_set(12, 21);
  const auto b = measure_balance(model, data, Stage::end_to_end, 10, cfg);
  // Fresh batches from a different stream.
  cfg.seed = 99;
  const auto check = measure_balance(model, data, Stage::end_to_end, 10, cfg);
  std::vector<double> weighted;
  for (std::size_t k = 0; k < b.weights.size(); ++k) weighted.push_back(b.weights[k] * check.mean_magnitude[k]);
  const auto [lo, hi] = std::minmax_element(weighted.begin(), weighted.end());
  CHECK(*hi / *lo < 2.0);
}

TEST_CASE("non-finite loss names the term") {
  auto data = toy_six();
  data[2].heat2d[5] = std::nan("");
  ToyPredictor model(3);
  TrainLog log;
  try {
    train_stage(model, data, Stage::pose2d, losskit::LossWeights{}, 3, short_config(), log);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_finite);
    CHECK(std::string(e.what()).find("j2d") != std::string::npos);
  }
}

TEST_CASE("training configuration is validated") {
  ToyPredictor model(3);
  TrainLog log;
  auto cfg = short_config();
  cfg.batch = 0;
  CHECK_THROWS_AS(train_stage(model, toy_six(), Stage::pose2d, {}, 1, cfg, log), Error);
  cfg = short_config();
  cfg.lr = -1.0;
  CHECK_THROWS_AS(train_staged(model, toy_six(), cfg), Error);
  CHECK_THROWS_AS(train_staged(model, std::vector<ToySample>{}, short_config()), Error);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "bodyvox_ckpt_test";
  std::filesystem::remove_all(dir);
  const ToyPredictor model(12);
  save_checkpoint(dir, model.params());
  const auto back = load_checkpoint(dir);
  CHECK(back.names == model.params().names);
  REQUIRE(back.values.size() == model.params().values.size());
  for (std::size_t i = 0; i < back.values.size(); ++i) {
    CHECK(back.values[i].shape == model.params().values[i].shape);
    CHECK(back.values[i].data == model.params().values[i].data);
  }
  std::filesystem::resize_file(dir / "params.bin", 16);
  CHECK_THROWS_AS(load_checkpoint(dir), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("log CSV") {
  const auto path = std::filesystem::temp_directory_path() / "bodyvox_train_log.csv";
  auto cfg = short_config();
  cfg.log_csv = path;
  ToyPredictor model(3);
  const auto log = train_staged(model, toy_six(), cfg);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "stage,iteration,j2d,segm,j3d,voxel,fv,sv,combined,grad_j2d,grad_segm,grad_j3d,grad_voxel,grad_fv,grad_sv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    CHECK(std::count(line.begin(), line.end(), ',') == 14);
    ++lines;
  }
  CHECK(lines == log.rows.size());
  std::filesystem::remove(path);
}

TEST_CASE("voxel_iou") {
  const std::vector<std::uint8_t> target = {1, 1, 0, 0};
  CHECK(voxel_iou(std::vector<double>{1, -1, 1, -1}, target) == doctest::Approx(1.0 / 3.0));
  CHECK(voxel_iou(std::vector<double>{5, 0, -1, -1}, target) == 1.0);
  CHECK(voxel_iou(std::vector<double>{-1, -1}, std::vector<std::uint8_t>{0, 0}) == 1.0);
  CHECK_THROWS_AS(voxel_iou(std::vector<double>{1}, target), Error);
}

TEST_CASE("input ablation") {
  const auto cfg = short_config();
  const auto held = make_toy_set(2, 77);
  CHECK(ablate_inputs({}, toy_six(), held, cfg).empty());
  const std::vector<AblationVariant> variants = {
      {"all", {}, false}, {"image only", {false, false, false, true}, false}, {"all, ground truth", {}, true}};
  const auto rows = ablate_inputs(variants, toy_six(), held, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "all");
  CHECK((rows[0].pose2d && rows[0].segm && rows[0].pose3d && rows[0].image));
  CHECK((!rows[1].pose2d && !rows[1].segm && !rows[1].pose3d && rows[1].image));
  for (const auto& r : rows) CHECK((r.iou >= 0.0 && r.iou <= 1.0));
}

TEST_CASE("ground-truth intermediate fields dominate predicted ones") {
  const auto train = make_toy_set(32, 7);
  const auto held = make_toy_set(8, 8);
  TrainConfig cfg;
  cfg.seed = 3;
  const std::vector<AblationVariant> variants = {{"all", {}, false},
                                                 {"image", {false, false, false, true}, false},
                                                 {"pose2d", {true, false, false, false}, false},
                                                 {"segm", {false, true, false, false}, false},
                                                 {"all, ground truth", {}, true}};
  const auto rows = ablate_inputs(variants, train, held, cfg);
  REQUIRE(rows.size() == variants.size());
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    CAPTURE(rows[i].name);
    CHECK(rows.back().iou >= rows[i].iou);
  }
}
