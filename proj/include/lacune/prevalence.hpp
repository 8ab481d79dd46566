#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "lacune/volume.hpp"

namespace lacune {

struct PrevalenceProvenance {
  std::size_t subject_count = 0;
  double dilation_mm = 0.0;
  bool symmetrized = false;
  bool csf_excluded = false;
};

/// Voxelwise lesion frequency in a common (atlas) space plus the binary
/// mask derived from it.
struct PrevalenceMap {
  Volume3D frequency;
  Mask3D mask;
  PrevalenceProvenance provenance;
};

/// frequency(v) = fraction of masks set at v; mask = frequency > 0.
PrevalenceMap build_frequency(const std::vector<Mask3D>& masks);

/// Voxelwise max with the mirror image along `axis` (0 = left-right).
PrevalenceMap symmetrize(const PrevalenceMap& m, int axis = 0);

template <class T>
Grid3<T> mirror(const Grid3<T>& v, int axis) {
  require(axis >= 0 && axis <= 2, ErrorCode::invalid_argument, "mirror axis must be 0, 1 or 2");
  Grid3<T> out = v;
  const Shape3 s = v.shape();
  for (std::size_t z = 0; z < s.nz; ++z)
    for (std::size_t y = 0; y < s.ny; ++y)
      for (std::size_t x = 0; x < s.nx; ++x) {
        const std::size_t X = axis == 0 ? s.nx - 1 - x : x;
        const std::size_t Y = axis == 1 ? s.ny - 1 - y : y;
        const std::size_t Z = axis == 2 ? s.nz - 1 - z : z;
        out(x, y, z) = v(X, Y, Z);
      }
  return out;
}

/// Dilation by a Euclidean ball of physical radius, honoring anisotropic
/// spacing: out(v) = 1 iff some set voxel lies within radius_mm of v.
Mask3D dilate_mm(const Mask3D& binary, double radius_mm);

PrevalenceMap dilate(const PrevalenceMap& m, double radius_mm);

PrevalenceMap remove_csf(const PrevalenceMap& m, const Mask3D& csf_mask);

struct PrevalenceBuildOptions {
  double dilation_mm = 7.0;
  int mirror_axis = 0;
  bool symmetrize = true;
};

/// frequency -> symmetrize -> dilate -> CSF removal.
PrevalenceMap build_prevalence_map(const std::vector<Mask3D>& masks, const Mask3D* csf,
                                   const PrevalenceBuildOptions& options = {});

namespace transform {
/// Atlas and subject grids share an origin; labels are resampled by
/// nearest neighbour in physical coordinates.
struct Identity {
  Shape3 shape;
  Spacing3 spacing;
};
/// Subject-space mask already produced by an external registration.
struct Precomputed {
  std::filesystem::path path;
  Shape3 shape;
  Spacing3 spacing;
};
/// Shell command template with {fixed}, {moving} and {out} placeholders.
struct ExternalCommand {
  std::string command_template;
  std::filesystem::path fixed;
  std::filesystem::path moving;
  std::filesystem::path out;
  Shape3 shape;
  Spacing3 spacing;
};
}  // namespace transform

using TransformSpec = std::variant<transform::Identity, transform::Precomputed, transform::ExternalCommand>;

Mask3D resample_nearest(const Mask3D& m, const Shape3& shape, const Spacing3& spacing);

Mask3D resample_to_subject(const PrevalenceMap& m, const TransformSpec& spec);

std::string expand_command(const std::string& tmpl, const std::filesystem::path& fixed,
                           const std::filesystem::path& moving, const std::filesystem::path& out);

/// Keeps each 26-connected predicted component in full iff it touches the
/// subject mask in at least one voxel.
Mask3D apply_mask(const Mask3D& pred, const Mask3D& subject_mask);

}  // namespace lacune
