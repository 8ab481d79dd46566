#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "lacune/volume.hpp"

namespace lacune {

struct PixelOrigin {
  std::size_t row = 0, col = 0;
  friend auto operator<=>(const PixelOrigin&, const PixelOrigin&) = default;
};

/// Square patch origins covering a plane; row-major sorted and unique.
struct PatchGrid {
  std::size_t patch_size = 0;
  std::size_t stride = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<PixelOrigin> origins;

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct Patch2D {
  PixelOrigin origin;
  std::size_t size = 0;
  std::size_t slice_index = 0;
  double pixel_mm = 1.0;  // in-plane pixel size at this patch's resolution
  std::vector<PlaneF> channels;
};

enum class Fusion { mean, max };

/// Origins advance by round(patch_size * (1 - overlap)); the last origin on
/// each axis is clamped to dim - patch_size so every pixel is covered.
PatchGrid compute_grid(std::size_t rows, std::size_t cols, std::size_t patch_size, double overlap_fraction);

/// 1D origins along one axis, exposed for tests.
std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t patch_size, std::size_t stride);

std::vector<Patch2D> extract_patches(const SliceStack& stack, const PatchGrid& grid);
std::vector<Patch2D> extract_patches(const std::vector<PlaneF>& channels, std::size_t slice_index,
                                     const PatchGrid& grid);

/// Single patch of `size` at `origin`.
Patch2D extract_patch(const SliceStack& stack, PixelOrigin origin, std::size_t size);

/// Top-left origin of a size x size window centred at (row, col), clamped
/// to the plane.
PixelOrigin centered_origin(double row, double col, std::size_t size, std::size_t rows, std::size_t cols);

Patch2D upsample_nn(const Patch2D& p, std::size_t factor);
Patch2D downsample_nn(const Patch2D& p, std::size_t factor);

/// Binarizes at 0.5, then takes pixel (i*factor, j*factor).
PlaneU8 downsample_mask_nn(const PlaneF& mask, std::size_t factor);
PlaneU8 downsample_mask_nn(const PlaneU8& mask, std::size_t factor);
PlaneF upsample_plane_nn(const PlaneF& p, std::size_t factor);

/// Overlap-aware reassembly of one channel. Pixels covered by no patch are 0.
PlaneF reconstruct(const std::vector<Patch2D>& patches, const PatchGrid& grid, Fusion fusion,
                   std::size_t channel = 0);

}  // namespace lacune
