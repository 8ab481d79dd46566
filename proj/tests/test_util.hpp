#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "lacune/error.hpp"
#include "lacune/volume.hpp"

namespace testutil {

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("lacune_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <class F>
lacune::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const lacune::Error& e) {
    return e.code();
  }
  FAIL("expected a lacune::Error");
  return lacune::ErrorCode::io;
}

inline lacune::Volume3D noise_volume(std::mt19937_64& rng, lacune::Shape3 s, lacune::Spacing3 sp = {1, 1, 1}) {
  lacune::Volume3D v(s, sp);
  std::normal_distribution<float> n(100.0f, 15.0f);
  for (float& x : v.data()) x = n(rng);
  return v;
}

}  // namespace testutil
