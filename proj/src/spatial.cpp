#include "bodyvox/spatial.hpp"

#include "bodyvox/voxcore.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace bodyvox::spatial {

namespace {

constexpr int kLeafSize = 8;

double box_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double v = q[k] < lo[k] ? lo[k] - q[k] : (q[k] > hi[k] ? q[k] - hi[k] : 0.0);
    d2 += v * v;
  }
  return d2;
}

bool better(double cost, int index, const KdTree::Hit& best) {
  return best.index < 0 || cost < best.cost || (cost == best.cost && index < best.index);
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points, std::span<const double> weights)
    : points_(points.begin(), points.end()), weights_(weights.begin(), weights.end()) {
  if (!weights_.empty()) {
    require(weights_.size() == points_.size(), ErrorCode::dim_mismatch,
            "kd-tree weight count differs from point count");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, int(points_.size()));
  }
}

int KdTree::build(int begin, int end) {
  const int id = int(nodes_.size());
  nodes_.push_back({});
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  node.min_weight = std::numeric_limits<double>::infinity();
  for (int i = begin; i < end; ++i) {
    node.lo = node.lo.cwiseMin(points_[order_[i]]);
    node.hi = node.hi.cwiseMax(points_[order_[i]]);
    if (!weights_.empty()) node.min_weight = std::min(node.min_weight, weights_[order_[i]]);
  }
  if (end - begin > kLeafSize) {
    int axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double pa = points_[a][axis];
                       const double pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    node.left = build(begin, mid);
    node.right = build(mid, end);
  }
  nodes_[id] = node;
  return id;
}

template <bool Weighted>
void KdTree::search(int id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      double cost = (points_[idx] - q).squaredNorm();
      if constexpr (Weighted) cost *= weights_[idx];
      if (better(cost, idx, best)) best = {idx, cost};
    }
    return;
  }
  auto bound = [&](const Node& n) {
    double b = box_dist2(q, n.lo, n.hi);
    if constexpr (Weighted) b *= n.min_weight;
    return b;
  };
  const double bl = bound(nodes_[node.left]);
  const double br = bound(nodes_[node.right]);
  const int first = bl <= br ? node.left : node.right;
  const int second = bl <= br ? node.right : node.left;
  const double b1 = std::min(bl, br);
  const double b2 = std::max(bl, br);
  if (best.index < 0 || b1 <= best.cost) search<Weighted>(first, q, best);
  if (best.index < 0 || b2 <= best.cost) search<Weighted>(second, q, best);
}

KdTree::Hit KdTree::nearest(const Vec3& q) const {
  Hit best;
  if (!nodes_.empty()) search<false>(0, q, best);
  return best;
}

KdTree::Hit KdTree::nearest_weighted(const Vec3& q) const {
  require(!weights_.empty(), ErrorCode::invalid_argument, "kd-tree built without weights");
  Hit best;
  if (!nodes_.empty()) search<true>(0, q, best);
  return best;
}

TriangleTree::TriangleTree(std::span<const Vec3> vertices,
                           std::span<const std::array<int, 3>> faces)
    : vertices_(vertices.begin(), vertices.end()), faces_(faces.begin(), faces.end()) {
  const std::size_t n = faces_.size();
  face_lo_.resize(n);
  face_hi_.resize(n);
  centroids_.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    const Vec3& a = vertices_[faces_[f][0]];
    const Vec3& b = vertices_[faces_[f][1]];
    const Vec3& c = vertices_[faces_[f][2]];
    face_lo_[f] = a.cwiseMin(b).cwiseMin(c);
    face_hi_[f] = a.cwiseMax(b).cwiseMax(c);
    centroids_[f] = (a + b + c) / 3.0;
  }
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  if (n > 0) build(0, int(n));
}

int TriangleTree::build(int begin, int end) {
  const int id = int(nodes_.size());
  nodes_.push_back({});
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i) {
    node.lo = node.lo.cwiseMin(face_lo_[order_[i]]);
    node.hi = node.hi.cwiseMax(face_hi_[order_[i]]);
  }
  if (end - begin > kLeafSize) {
    int axis = 0;
    (node.hi - node.lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double ca = centroids_[a][axis];
                       const double cb = centroids_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    node.left = build(begin, mid);
    node.right = build(mid, end);
  }
  nodes_[id] = node;
  return id;
}

void TriangleTree::search(int id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int f = order_[i];
      const Vec3 p = voxcore::closest_point_on_triangle(q, vertices_[faces_[f][0]],
                                                        vertices_[faces_[f][1]],
                                                        vertices_[faces_[f][2]]);
      const double d2 = (p - q).squaredNorm();
      if (best.face < 0 || d2 < best.dist2 || (d2 == best.dist2 && f < best.face)) {
        best = {f, d2, p};
      }
    }
    return;
  }
  const double bl = box_dist2(q, nodes_[node.left].lo, nodes_[node.left].hi);
  const double br = box_dist2(q, nodes_[node.right].lo, nodes_[node.right].hi);
  const int first = bl <= br ? node.left : node.right;
  const int second = bl <= br ? node.right : node.left;
  if (best.face < 0 || std::min(bl, br) <= best.dist2) search(first, q, best);
  if (best.face < 0 || std::max(bl, br) <= best.dist2) search(second, q, best);
}

TriangleTree::Hit TriangleTree::closest(const Vec3& q) const {
  Hit best;
  if (!nodes_.empty()) search(0, q, best);
  return best;
}

void TriangleTree::overlapping(const Vec3& lo, const Vec3& hi, std::vector<int>& out) const {
  if (nodes_.empty()) return;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if ((node.lo.array() > hi.array()).any() || (node.hi.array() < lo.array()).any()) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[i];
        if ((face_lo_[f].array() <= hi.array()).all() && (face_hi_[f].array() >= lo.array()).all()) {
          out.push_back(f);
        }
      }
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
}

}  // namespace bodyvox::spatial
