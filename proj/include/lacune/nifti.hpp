#pragma once

#include <filesystem>

#include "lacune/volume.hpp"

namespace lacune::nifti {

/// Reads a NIfTI-1 volume (.nii or .nii.gz) as float. Voxel data is
/// permuted/flipped so that the internal axes are the closest match to
/// RAS+; the returned affine maps the reoriented indices to world mm.
/// scl_slope/scl_inter are applied.
Volume3D read_volume(const std::filesystem::path& path);

/// Reads a volume and requires every voxel to be exactly 0 or 1.
Mask3D read_mask(const std::filesystem::path& path);

/// Writes float32 data; gzip-compressed when the path ends in ".gz".
void write_volume(const std::filesystem::path& path, const Volume3D& v);

/// Writes uint8 data.
void write_mask(const std::filesystem::path& path, const Mask3D& m);

/// Locates `<stem>.nii.gz` or `<stem>.nii` in `dir`.
std::optional<std::filesystem::path> find_image(const std::filesystem::path& dir, const std::string& stem);

}  // namespace lacune::nifti
