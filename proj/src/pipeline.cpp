#include "lacune/pipeline.hpp"

#include <chrono>
#include <exception>

#include "lacune/kernels.hpp"
#include "lacune/prevalence.hpp"
#include "lacune/provenance.hpp"

namespace lacune {

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names = {"normalize",       "patch_grid", "detect",     "candidates",
                                                 "prevalence_mask", "segment",    "final_mask", "uncertainty"};
  return names;
}

Mask3D make_uncertainty(const Mask3D& segmentation) {
  require_binary(segmentation, "segmentation");
  return kernels::parallel::inplane_border(segmentation);
}

namespace {

template <class F>
auto run_stage(std::vector<StageRecord>& log, const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  StageRecord rec{name, 0.0, nlohmann::json::object()};
  try {
    if constexpr (std::is_void_v<decltype(body(rec.detail))>) {
      body(rec.detail);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back(std::move(rec));
    } else {
      auto out = body(rec.detail);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back(std::move(rec));
      return out;
    }
  } catch (const Error& e) {
    throw e.stage().empty() ? e.with_stage(name) : e;
  }
}

}  // namespace

SegmentationResult predict_case(const MultiModalCase& raw, const Detector& detector, const Segmenter& segmenter,
                                const Mask3D& subject_mask, const PipelineOptions& options) {
  SegmentationResult res;
  auto& log = res.stages;
  const DetectorConfig& dc = detector.config();

  const MultiModalCase c = run_stage(log, "normalize", [&](nlohmann::json& d) {
    validate_case(raw);
    require(subject_mask.same_geometry(raw.t1), ErrorCode::shape_mismatch,
            "subject prevalence mask geometry differs from case");
    d["foreground_only"] = options.normalize.foreground_only;
    return normalize_case(raw, options.normalize);
  });
  const Shape3 sh = c.shape();

  const PatchGrid grid = run_stage(log, "patch_grid", [&](nlohmann::json& d) {
    PatchGrid g = compute_grid(sh.ny, sh.nx, dc.patch_size, dc.overlap);
    d["patch_size"] = g.patch_size;
    d["stride"] = g.stride;
    d["patches_per_slice"] = g.origins.size();
    return g;
  });

  const std::vector<Detection> detections = run_stage(log, "detect", [&](nlohmann::json& d) {
    std::vector<std::vector<Detection>> per_slice(sh.nz);
    const long nz = static_cast<long>(sh.nz);
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (long z = 0; z < nz; ++z) {
      try {
        for (const Patch2D& p : extract_patches(slice_stack(c, static_cast<std::size_t>(z)), grid)) {
          auto dets = detector.detect(upsample_nn(p, dc.upsample_factor));
          for (auto& det : dets) per_slice[static_cast<std::size_t>(z)].push_back(std::move(det));
        }
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    std::vector<Detection> all;
    for (auto& v : per_slice)
      for (auto& det : v) all.push_back(std::move(det));
    d["upsample_factor"] = dc.upsample_factor;
    d["detections"] = all.size();
    return all;
  });

  const Mask3D stage1 = run_stage(log, "candidates", [&](nlohmann::json& d) {
    Mask3D m = candidates_from_detections(detections, sh, c.spacing(), dc.upsample_factor);
    m.set_affine(c.t1.affine());
    d["voxels"] = count_nonzero(m);
    return m;
  });

  res.candidates = run_stage(log, "prevalence_mask", [&](nlohmann::json& d) {
    Mask3D m = apply_mask(stage1, subject_mask);
    d["voxels"] = count_nonzero(m);
    return m;
  });

  const Mask3D seg = run_stage(log, "segment", [&](nlohmann::json& d) {
    Mask3D m = segment_candidates(c, res.candidates, segmenter);
    d["voxels"] = count_nonzero(m);
    d["threshold"] = segmenter.threshold();
    return m;
  });

  res.segmentation = run_stage(log, "final_mask", [&](nlohmann::json& d) {
    Mask3D m = apply_mask(seg, subject_mask);
    d["voxels"] = count_nonzero(m);
    return m;
  });

  res.uncertainty = run_stage(log, "uncertainty", [&](nlohmann::json& d) {
    Mask3D m = make_uncertainty(res.segmentation);
    d["voxels"] = count_nonzero(m);
    return m;
  });

  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : log) stages.push_back({{"name", s.name}, {"seconds", s.seconds}, {"detail", s.detail}});
  res.provenance = {{"case_id", raw.case_id},
                    {"stages", stages},
                    {"detector", {{"kind", detector.kind()}, {"config", dc}}},
                    {"segmenter", {{"kind", segmenter.kind()}, {"config", segmenter.config()}, {"threshold", segmenter.threshold()}}},
                    {"subject_mask_sha256", sha256_of(subject_mask)},
                    {"segmentation_sha256", sha256_of(res.segmentation)},
                    {"uncertainty_sha256", sha256_of(res.uncertainty)},
                    {"identifiers", options.identifiers}};
  return res;
}

}  // namespace lacune
