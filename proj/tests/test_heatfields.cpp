#include "bodyvox/heatfields.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace bodyvox;
using namespace bodyvox::heatfields;

namespace {

Skeleton random_2d(std::mt19937_64& rng, int res) {
  std::uniform_real_distribution<double> u(0.0, double(res - 1));
  Skeleton s;
  for (int j = 0; j < kNumJoints; ++j) s.joints.emplace_back(u(rng), u(rng), 0.0);
  return s;
}

Skeleton random_3d(std::mt19937_64& rng) {
  // Root at an arbitrary camera position; joints within +-400 mm.
  std::uniform_real_distribution<double> u(-400.0, 400.0);
  Skeleton s;
  const Vec3 root(u(rng), u(rng), 3000.0 + u(rng));
  for (int j = 0; j < kNumJoints; ++j) {
    s.joints.push_back(j == kDefaultRoot ? root : root + Vec3(u(rng), u(rng), u(rng)));
  }
  return s;
}

}  // namespace

TEST_CASE("bin width constant") {
  const DepthQuantizer q;
  CHECK(q.bin_width() == doctest::Approx(850.0 / 19.0).epsilon(1e-15));
  CHECK(q.bin_width() / 2.0 < 22.4);
  CHECK_THROWS_AS(DepthQuantizer(0.0, 19), Error);
  CHECK_THROWS_AS(DepthQuantizer(850.0, 0), Error);
}

TEST_CASE("encode_2d closed form") {
  Skeleton s;
  s.joints = {Vec3(10, 20, 0), Vec3(5, 5, 0)};
  s.root = 0;
  const double sigma = 1.3;
  const auto hm = encode_2d(s, 32, sigma);
  CHECK(hm.at(0, 10, 20) == 1.0);
  const double nb = std::exp(-1.0 / (2 * sigma * sigma));
  CHECK(hm.at(0, 11, 20) == doctest::Approx(nb).epsilon(1e-15));
  CHECK(hm.at(0, 9, 20) == doctest::Approx(nb).epsilon(1e-15));
  CHECK(hm.at(0, 10, 21) == doctest::Approx(nb).epsilon(1e-15));
  CHECK(hm.at(0, 10, 19) == doctest::Approx(nb).epsilon(1e-15));

  Skeleton far;
  far.joints = {Vec3(-200, 500, 0)};
  far.root = 0;
  const auto hf = encode_2d(far, 64, 1.0);
  CHECK(*std::max_element(hf.data.begin(), hf.data.end()) < 1e-6);
}

TEST_CASE("encode_2d sums match direct summation") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 10; ++t) {
    const Skeleton s = random_2d(rng, 64);
    const auto hm = encode_2d(s, 64, 1.0);
    for (int j = 0; j < kNumJoints; ++j) {
      double direct = 0.0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const double dx = x - s.joints[j].x(), dy = y - s.joints[j].y();
          direct += std::exp(-(dx * dx + dy * dy) / 2.0);
        }
      double sum = 0.0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) sum += hm.at(j, x, y);
      CHECK(std::abs(sum - direct) <= 1e-12);
    }
  }
}

TEST_CASE("decode_2d") {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Skeleton s = random_2d(rng, 64);
    const Skeleton d = decode_2d(encode_2d(s));
    for (int j = 0; j < kNumJoints; ++j) {
      worst = std::max({worst, std::abs(d.joints[j].x() - s.joints[j].x()),
                        std::abs(d.joints[j].y() - s.joints[j].y())});
      CHECK_FALSE(d.low_confidence[j]);
    }
  }
  CHECK(worst <= 0.5);

  JointHeatmap2D zero{2, 8, 1.0, std::vector<double>(128, 0.0)};
  const Skeleton z = decode_2d(zero);
  CHECK(z.low_confidence[0] == 1);
  CHECK(z.joints[0] == Vec3::Zero());

  JointHeatmap2D tie{1, 8, 1.0, std::vector<double>(64, 0.0)};
  tie.data[8 * 5 + 2] = 0.9;
  tie.data[8 * 3 + 6] = 0.9;
  const Skeleton t = decode_2d(tie);
  CHECK(t.joints[0] == Vec3(6, 3, 0));
}

TEST_CASE("encode_2d properties") {
  Skeleton s;
  s.joints = {Vec3(20.3, 30.6, 0)};
  s.root = 0;
  const auto a = encode_2d(s, 64, 1.0);
  SUBCASE("shift equivariance") {
    Skeleton moved = s;
    moved.joints[0] += Vec3(3, -2, 0);
    const auto b = encode_2d(moved, 64, 1.0);
    for (int y = 10; y < 50; ++y)
      for (int x = 10; x < 50; ++x) CHECK(b.at(0, x + 3, y - 2) == doctest::Approx(a.at(0, x, y)).epsilon(1e-13));
  }
  SUBCASE("positive, bounded, decreasing away from the peak") {
    // Doubles underflow past ~38 sigma from the joint, so strict positivity
    // and monotonicity are checked inside that radius.
    const double reach = 37.0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double v = a.at(0, x, y);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (std::hypot(x - 20.3, y - 30.6) < reach) CHECK(v > 0.0);
      }
    // Peak cell is (20, 31).
    auto near = [&](int x, int y) { return std::hypot(x - 20.3, y - 30.6) < reach; };
    for (int x = 20; x < 63 && near(x + 1, 31); ++x) CHECK(a.at(0, x + 1, 31) < a.at(0, x, 31));
    for (int x = 20; x > 0; --x) CHECK(a.at(0, x - 1, 31) < a.at(0, x, 31));
    for (int y = 31; y < 63 && near(20, y + 1); ++y) CHECK(a.at(0, 20, y + 1) < a.at(0, 20, y));
    for (int y = 31; y > 0; --y) CHECK(a.at(0, 20, y - 1) < a.at(0, 20, y));
  }
}

TEST_CASE("encode_3d") {
  const DepthQuantizer q;
  HeatmapConfig cfg;
  SUBCASE("root peaks at the volume center") {
    std::mt19937_64 rng(2);
    const Skeleton s = random_3d(rng);
    const auto hm = encode_3d(s, q, cfg);
    CHECK(hm.at(kDefaultRoot, 32, 32, 9) == 1.0);
    const Skeleton d = decode_3d(hm, q, s.joints[kDefaultRoot].z());
    CHECK(d.joints[kDefaultRoot].z() == s.joints[kDefaultRoot].z());
    CHECK_FALSE(hm.clipped[kDefaultRoot]);
  }
  SUBCASE("range edge clips to the last bin") {
    Skeleton s;
    s.joints = {Vec3(0, 0, 1000), Vec3(0, 0, 1000 + 425), Vec3(0, 0, 1000 - 425), Vec3(0, 0, 1000 + 400)};
    s.root = 0;
    const auto hm = encode_3d(s, q, cfg);
    CHECK(hm.clipped[1] == 1);
    CHECK(hm.at(1, 32, 32, 18) == 1.0);
    CHECK(hm.clipped[2] == 1);
    CHECK(hm.at(2, 32, 32, 0) == 1.0);
    CHECK(hm.clipped[3] == 0);
  }
  SUBCASE("round trip within half a cell and half a bin") {
    std::mt19937_64 rng(3);
    double worst_xy = 0.0, worst_z = 0.0, worst_mean = 0.0;
    for (int t = 0; t < 100; ++t) {
      const Skeleton s = random_3d(rng);
      const auto hm = encode_3d(s, q, cfg);
      const double mm = hm.frame->mm_per_cell;
      const Skeleton d = decode_3d(hm, q, s.joints[kDefaultRoot].z());
      double mean = 0.0;
      for (int j = 0; j < kNumJoints; ++j) {
        const Vec3 e = d.joints[j] - s.joints[j];
        worst_xy = std::max({worst_xy, std::abs(e.x()) / mm, std::abs(e.y()) / mm});
        worst_z = std::max(worst_z, std::abs(e.z()));
        mean += e.norm() / kNumJoints;
      }
      worst_mean = std::max(worst_mean, mean - (std::sqrt(2.0) * mm / 2.0 + q.bin_width() / 2.0));
    }
    CHECK(worst_xy <= 0.5 + 1e-12);
    CHECK(worst_z <= q.bin_width() / 2.0 + 1e-9);
    CHECK(worst_mean <= 0.0);
  }
  SUBCASE("missing frame and empty channels") {
    JointHeatmap3D hm;
    hm.joints = 2;
    hm.resolution = 4;
    hm.bins = 19;
    hm.data.assign(2 * 19 * 16, 0.0);
    CHECK_THROWS_AS(decode_3d(hm, q, 0.0), Error);
    hm.frame = HeatmapFrame{10.0, Vec2::Zero()};
    const Skeleton d = decode_3d(hm, q, 0.0);
    CHECK(d.low_confidence[0] == 1);
    CHECK(d.low_confidence[1] == 1);
  }
}
