#pragma once

#include "bodyvox/voxcore.hpp"

#include <span>
#include <vector>

namespace bodyvox::isosurface {

struct Surface {
  std::vector<Vec3> vertices;  // grid coordinates (sample i sits at i + 0.5)
  std::vector<std::array<int, 3>> faces;
  // Per vertex, the larger of the two samples on the lattice edge it lies on.
  std::vector<double> confidence;
};

// Marching cubes over a scalar field sampled at cell centers. Samples > iso
// are inside. The lattice is padded with `outside` so level sets close at the
// grid boundary; faces are oriented with normals pointing out of the inside
// region. Ambiguous cube faces keep their inside corners apart.
Surface extract(const voxcore::GridDims& dims, std::span<const double> values, double iso,
                double outside = 0.0);

}  // namespace bodyvox::isosurface
