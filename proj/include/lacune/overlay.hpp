#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lacune/volume.hpp"

namespace lacune {

struct Rgb8 {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> data;  // row-major RGB
};

/// Grey FLAIR with the prevalence mask tinted pink, truth red, prediction
/// blue and their overlap magenta. Null masks are skipped.
Rgb8 render_overlay(const Volume3D& flair, std::size_t z, const Mask3D* prevalence, const Mask3D* truth,
                    const Mask3D& prediction);

void write_png(const std::filesystem::path& path, const Rgb8& image);

/// One `<case_id>_z<NNN>.png` per slice holding truth or prediction.
/// Returns the written paths.
std::vector<std::filesystem::path> write_overlays(const std::filesystem::path& dir, const std::string& case_id,
                                                  const Volume3D& flair, const Mask3D* prevalence,
                                                  const Mask3D* truth, const Mask3D& prediction);

}  // namespace lacune
