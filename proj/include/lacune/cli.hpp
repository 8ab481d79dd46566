#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "lacune/detector.hpp"
#include "lacune/phantom.hpp"
#include "lacune/prevalence.hpp"
#include "lacune/segmenter.hpp"

namespace lacune::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitWorkflow = 1;
inline constexpr int kExitUsage = 2;

/// Parameters for every workflow. The JSON form has the optional sections
/// "phantom", "prevalence", "detector", "segmenter" and a global "seed"
/// that, when present, overrides the section seeds. Unknown keys are
/// rejected.
struct RunConfig {
  PhantomSpec phantom;
  PrevalenceBuildOptions prevalence;
  DetectorConfig detector;
  SegmenterConfig segmenter;
  std::optional<std::uint64_t> seed;

  void apply_seed(std::uint64_t s);
};

RunConfig load_run_config(const std::optional<std::filesystem::path>& path);
nlohmann::json to_json(const RunConfig& c);

/// Sorted sub-directories of `root` that hold a t1 image.
std::vector<std::filesystem::path> case_directories(const std::filesystem::path& root);

/// Returns the process exit status: 0 ok, 1 workflow error, 2 usage error.
int dispatch(int argc, const char* const* argv);

}  // namespace lacune::cli
