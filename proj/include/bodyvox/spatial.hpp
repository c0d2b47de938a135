#pragma once

#include "bodyvox/common.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace bodyvox::spatial {

// Static kd-tree over 3D points. Queries return the lowest index among
// equidistant candidates, so results match an exhaustive scan exactly.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points, std::span<const double> weights = {});

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  struct Hit {
    int index = -1;
    double cost = 0.0;  // squared distance, or weight * squared distance
  };

  // argmin_i |p_i - q|^2
  Hit nearest(const Vec3& q) const;
  // argmin_i w_i |p_i - q|^2; requires positive weights at construction.
  Hit nearest_weighted(const Vec3& q) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int left = -1;
    int right = -1;
    Vec3 lo;
    Vec3 hi;
    double min_weight = 0.0;
  };

  int build(int begin, int end);
  template <bool Weighted>
  void search(int node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> points_;
  std::vector<double> weights_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// Bounding-volume hierarchy over triangles for closest-triangle queries.
class TriangleTree {
 public:
  TriangleTree() = default;
  TriangleTree(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces);

  struct Hit {
    int face = -1;
    double dist2 = 0.0;
    Vec3 point = Vec3::Zero();
  };

  Hit closest(const Vec3& q) const;

  // Indices of faces whose boxes overlap [lo, hi].
  void overlapping(const Vec3& lo, const Vec3& hi, std::vector<int>& out) const;

 private:
  struct Node {
    Vec3 lo;
    Vec3 hi;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
  };

  int build(int begin, int end);
  void search(int node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<Vec3> face_lo_;
  std::vector<Vec3> face_hi_;
  std::vector<Vec3> centroids_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace bodyvox::spatial
