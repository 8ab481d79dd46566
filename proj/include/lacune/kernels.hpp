#pragma once

#include <cstddef>
#include <span>

#include "lacune/volume.hpp"

// Data-parallel kernels. Every kernel exists twice: a straightforward serial
// reference used by the tests, and an OpenMP version used by the library.
// Mask and convolution kernels agree bit-for-bit with their references;
// moments agree to rounding. All parallel kernels are deterministic for any
// thread count.

namespace lacune::kernels {

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;  // population form, divisor N
  std::size_t count = 0;
  float min = 0.0f, max = 0.0f;
};

/// 3x3 same-padded (or 1x1) convolution over a CHW tensor.
struct ConvShape {
  std::size_t in_channels, out_channels, height, width, kernel;
};

namespace serial {

Moments moments(const Volume3D& v, bool foreground_only);

/// Stamps the physical-radius ball around every set voxel.
Mask3D dilate_mm(const Mask3D& m, double radius_mm);

/// Per axial slice: 3x3 dilation minus the input.
Mask3D inplane_border(const Mask3D& seg);

void conv2d_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> out);

}  // namespace serial

namespace parallel {

/// Per-slab partial sums combined in slab order.
Moments moments(const Volume3D& v, bool foreground_only);

/// Thresholds an exact anisotropic squared Euclidean distance transform.
Mask3D dilate_mm(const Mask3D& m, double radius_mm);

Mask3D inplane_border(const Mask3D& seg);

void conv2d_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> out);

}  // namespace parallel

/// Squared physical distance to the nearest set voxel (infinity if none).
Grid3<double> squared_distance_transform(const Mask3D& m);

}  // namespace lacune::kernels
