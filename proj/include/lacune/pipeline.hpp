#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lacune/detector.hpp"
#include "lacune/segmenter.hpp"
#include "lacune/volume.hpp"

namespace lacune {

struct StageRecord {
  std::string name;
  double seconds = 0.0;
  nlohmann::json detail = nlohmann::json::object();
};

struct SegmentationResult {
  Mask3D segmentation;
  Mask3D uncertainty;  // {0,1}; disjoint from segmentation
  Mask3D candidates;   // stage-1 map after prevalence masking
  std::vector<StageRecord> stages;
  nlohmann::json provenance;
};

struct PipelineOptions {
  NormalizeOptions normalize;
  /// Free-form identifiers recorded in the provenance (model/map hashes).
  nlohmann::json identifiers = nlohmann::json::object();
};

/// Names of the stages in execution order.
const std::vector<std::string>& pipeline_stages();

/// normalize -> patch grid -> x4 upsample + detect -> candidate map ->
/// prevalence mask -> candidate-centred segmentation -> prevalence mask ->
/// uncertainty border. Errors carry the failing stage name.
SegmentationResult predict_case(const MultiModalCase& c, const Detector& detector, const Segmenter& segmenter,
                                const Mask3D& subject_mask, const PipelineOptions& options = {});

/// Per axial slice: 3x3 dilation of the segmentation minus itself.
Mask3D make_uncertainty(const Mask3D& segmentation);

}  // namespace lacune
