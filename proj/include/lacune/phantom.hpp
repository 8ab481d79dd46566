#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "lacune/volume.hpp"

namespace lacune {

/// Raw (pre-normalization) intensities per modality, ordered (T1, T2, FLAIR).
struct IntensityModel {
  std::array<float, 3> tissue = {1.0f, 0.7f, 0.9f};
  std::array<float, 3> core = {0.25f, 1.6f, 0.15f};
  std::array<float, 3> rim = {1.0f, 0.7f, 1.5f};
  float field_amplitude = 0.05f;  // smooth multiplicative tissue variation
};

struct PhantomSpec {
  Shape3 shape{128, 128, 64};
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::size_t n_lacunes = 3;
  std::size_t n_decoys_outside_region = 2;
  std::array<double, 2> diameter_range_mm = {3.0, 15.0};
  bool allow_any_diameter = false;
  std::size_t rim_thickness = 1;
  double noise_level = 0.03;
  std::uint64_t seed = 0;
  /// Semi-axes as fractions of the field of view.
  std::array<double, 3> brain_fraction = {0.42, 0.42, 0.42};
  std::array<double, 3> region_fraction = {0.22, 0.22, 0.25};
  IntensityModel intensity;
};

void validate(const PhantomSpec& spec);

struct PlantedLesion {
  std::array<std::size_t, 3> center{};   // voxel
  std::array<double, 3> semi_axes_mm{};  // x, y, z
  double equivalent_diameter_mm = 0.0;   // of the rendered core
  std::size_t voxels = 0;
  bool decoy = false;
};

struct Phantom {
  MultiModalCase image;  // truth = in-region lacune cores
  Mask3D region;         // synthetic prevalence region
  Mask3D decoys;         // out-of-region decoy cores
  Mask3D csf;            // everything outside the brain ellipsoid
  std::vector<PlantedLesion> lesions;
};

Phantom generate_phantom(const PhantomSpec& spec);

/// 2 * cbrt(3V / 4pi) for V in mm^3.
double equivalent_diameter(std::size_t voxels, const Spacing3& spacing);

void to_json(nlohmann::json& j, const PhantomSpec& s);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const PlantedLesion& l);

/// Writes t1/t2/flair/truth/region/decoys/csf NIfTI files and manifest.json.
void write_phantom(const std::filesystem::path& dir, const Phantom& p, const PhantomSpec& spec);

}  // namespace lacune
