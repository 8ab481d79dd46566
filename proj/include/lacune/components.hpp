#pragma once

#include <cstdint>
#include <vector>

#include "lacune/volume.hpp"

namespace lacune {

enum class Connectivity3D { face6 = 6, full26 = 26 };
enum class Connectivity2D { four = 4, eight = 8 };

/// Labels are 1..count in raster (x fastest) order of each component's
/// first voxel; background is 0.
struct Labeling3D {
  Grid3<std::int32_t> labels;
  std::int32_t count = 0;
};

struct Labeling2D {
  Plane<std::int32_t> labels;
  std::int32_t count = 0;
};

Labeling3D label_components(const Mask3D& m, Connectivity3D conn = Connectivity3D::full26);
Labeling2D label_components(const PlaneU8& p, Connectivity2D conn = Connectivity2D::eight);

/// Voxel (linear index) lists per component, index k holding label k+1.
std::vector<std::vector<std::size_t>> component_voxels(const Labeling3D& l);
std::vector<std::vector<std::size_t>> component_pixels(const Labeling2D& l);

/// Fills background regions of the plane not 4-connected to its border.
PlaneU8 fill_holes(const PlaneU8& p);

}  // namespace lacune
