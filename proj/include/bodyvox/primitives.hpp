#pragma once

#include "bodyvox/voxcore.hpp"

namespace bodyvox::primitives {

// Closed, outward-oriented triangle meshes.
voxcore::TriMesh make_box(const Vec3& lo, const Vec3& hi);
voxcore::TriMesh make_icosphere(const Vec3& center, double radius, int subdivisions);
// Cylinder of radius `radius` between a and b capped with hemispheres.
voxcore::TriMesh make_capsule(const Vec3& a, const Vec3& b, double radius, int slices = 48,
                              int cap_rings = 12);

// Concatenates meshes (vertex indices offset; labels carried when all have them).
voxcore::TriMesh merge(const voxcore::TriMesh& a, const voxcore::TriMesh& b);

}  // namespace bodyvox::primitives
