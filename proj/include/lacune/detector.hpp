#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacune/checkpoint.hpp"
#include "lacune/metrics.hpp"
#include "lacune/nn.hpp"
#include "lacune/patch.hpp"
#include "lacune/volume.hpp"

namespace lacune {

/// Hypointensity rule used by the reference detector and the fallback
/// segmenter: a pixel is a core candidate when both FLAIR and T1 lie more
/// than the given drop (z-score units) below the patch median.
struct HypointensityRule {
  double flair_drop = 1.0;
  double t1_drop = 1.0;
};

struct RuleBasedParams {
  HypointensityRule rule;
  double min_diameter_mm = 3.0;
  double max_diameter_mm = 15.0;
  /// Slack on the diameter gate for voxel quantization of cross-sections.
  double diameter_tolerance_mm = 1.0;
  /// The upper gate is max_diameter_mm * inplane_elongation: an ellipsoid
  /// with axis ratios >= 0.5 and its shortest axis through-plane has
  /// in-plane sections up to 2^(1/3) times its volume-equivalent diameter.
  double inplane_elongation = 1.26;
  /// Components touching the patch edge are left to an overlapping patch.
  bool reject_border_components = true;
};

struct DetectorConfig {
  std::string model = "learned";  // "learned" | "rule-based"
  std::vector<int> anchor_sizes = {4, 8, 16, 32, 64};
  std::vector<double> aspect_ratios = {0.02, 0.25, 1.0, 2.0, 2.75};
  std::size_t batch_size = 6;
  std::size_t epochs = 20;
  double score_threshold = 0.5;
  double hflip_probability = 0.5;
  std::size_t upsample_factor = 4;
  std::size_t patch_size = 64;
  double overlap = 0.5;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::size_t base_channels = 8;
  double nms_iou = 0.3;
  std::size_t max_detections = 100;
  RuleBasedParams rule_based;
};

void validate(const DetectorConfig& c);
void to_json(nlohmann::json& j, const DetectorConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, DetectorConfig& c);

/// One stage-1 candidate in patch pixel coordinates.
struct Detection {
  Box bbox;
  PlaneU8 mask;  // patch-sized
  double score = 0.0;
  PixelOrigin patch_origin;
  std::size_t slice_index = 0;
};

struct TruthObject {
  Box bbox;
  PlaneU8 mask;
};

/// A native-resolution patch with its truth instances; the detector sees
/// it upsampled by `upsample_factor`.
struct DetectionSample {
  std::string case_id;
  Patch2D patch;
  std::vector<TruthObject> instances;
};

struct DetectionDataset {
  std::size_t upsample_factor = 4;
  std::vector<DetectionSample> samples;

  Patch2D upsampled_patch(std::size_t i) const;
  std::vector<TruthObject> upsampled_instances(std::size_t i) const;
};

/// Every grid patch of every slice that holds truth, with instances from
/// 8-connected truth components clipped to the patch. Cases are z-scored
/// here.
DetectionDataset build_training_set(const std::vector<MultiModalCase>& cases, const DetectorConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double median_batch_loss = 0.0;
};

class Detector {
 public:
  explicit Detector(DetectorConfig config) : config_(std::move(config)) {}
  virtual ~Detector() = default;

  /// Checks geometry (3 channels, patch_size * upsample_factor square),
  /// keeps score >= score_threshold, sorts by descending score.
  std::vector<Detection> detect(const Patch2D& patch) const;

  virtual std::string kind() const = 0;
  virtual Checkpoint to_checkpoint() const;

  const DetectorConfig& config() const { return config_; }
  DetectorConfig& mutable_config() { return config_; }

 protected:
  virtual std::vector<Detection> propose(const Patch2D& patch) const = 0;

  DetectorConfig config_;
};

class RuleBasedDetector final : public Detector {
 public:
  explicit RuleBasedDetector(DetectorConfig config);
  std::string kind() const override { return "rule-based"; }

 protected:
  std::vector<Detection> propose(const Patch2D& patch) const override;
};

/// Pixels where FLAIR and T1 both fall more than the configured drop below
/// their patch medians (median = element n/2 of the sorted plane).
PlaneU8 hypointense_pixels(const PlaneF& t1, const PlaneF& flair, const HypointensityRule& rule);

/// Thresholds, labels (8-connected), and size-gates hypointense blobs.
std::vector<Detection> rule_based_detect(const Patch2D& patch, const RuleBasedParams& params);

/// Small anchor-based detector: a convolutional trunk on the block-averaged
/// input, an objectness/box-regression head over every (size, ratio) anchor
/// at stride 2 * upsample_factor, and a per-pixel mask head.
class LearnedDetector final : public Detector {
 public:
  explicit LearnedDetector(DetectorConfig config);

  std::string kind() const override { return "learned"; }
  Checkpoint to_checkpoint() const override;
  void load_weights(const std::vector<float>& weights);

  /// Seeded training with horizontal-flip augmentation; one log entry per
  /// epoch. Throws training_diverged on a non-finite loss.
  void train(const DetectionDataset& data);

  const std::vector<EpochLog>& training_log() const { return log_; }
  std::size_t epochs_run() const { return log_.size(); }

  struct Anchor {
    double cy, cx, h, w;
  };
  const std::vector<Anchor>& anchors() const { return anchors_; }

 protected:
  std::vector<Detection> propose(const Patch2D& patch) const override;

 private:
  // Layers cache activations, so inference runs on a copy of the network.
  struct Net {
    nn::Conv2d c1, c2, c3, rpn, mask;
    nn::ReLU r1, r2, r3;
    nn::MaxPool2 pool;
    std::size_t factor = 4;

    struct Heads {
      nn::Tensor rpn;   // 5A x G x G: A objectness logits, then 4A box deltas
      nn::Tensor mask;  // 1 x S x S logits at native resolution
    };
    Heads forward(const nn::Tensor& input);
    void backward(const nn::Tensor& grad_rpn, const nn::Tensor& grad_mask);
    std::vector<nn::Param*> parameters();
  };

  double accumulate_sample(const Patch2D& patch, const std::vector<TruthObject>& truth);
  void build_anchors();

  Net net_;
  std::vector<Anchor> anchors_;  // index = a * G * G + cell
  std::size_t grid_ = 0;
  std::vector<EpochLog> log_;
};

std::unique_ptr<Detector> make_detector(const DetectorConfig& config);
std::unique_ptr<Detector> load_detector(const std::filesystem::path& checkpoint);

/// Each detection mask is downsampled by `upsample_factor` (binarized at
/// 0.5), placed at its origin on its slice and OR-fused.
Mask3D candidates_from_detections(const std::vector<Detection>& detections, const Shape3& shape,
                                  const Spacing3& spacing, std::size_t upsample_factor);

/// Horizontal (left-right, column) flip of a patch and of truth objects.
Patch2D hflip(const Patch2D& p);
TruthObject hflip(const TruthObject& t, std::size_t size);

}  // namespace lacune
