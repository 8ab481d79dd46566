#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacune/checkpoint.hpp"
#include "lacune/detector.hpp"
#include "lacune/nn.hpp"
#include "lacune/patch.hpp"
#include "lacune/volume.hpp"

namespace lacune {

struct SegmenterConfig {
  std::string model = "unet";  // "unet" | "rule-based"
  std::size_t patch_size = 32;
  double overlap = 0.5;
  std::array<double, 2> lacune_background_ratio = {0.1, 0.9};
  std::size_t epochs = 30;
  /// Fixed posterior threshold, or chosen on validation data when
  /// `optimize_threshold` is set (JSON: "threshold": "optimize").
  double threshold = 0.5;
  bool optimize_threshold = true;
  std::uint64_t seed = 0;
  std::size_t base_channels = 8;
  std::string loss = "dice";  // "dice" | "dice_bce"
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  /// Positive centres drawn from the truth voxels; 0 keeps every one.
  std::size_t max_positive_patches = 100;
  /// Uniform centre offset in [-jitter, jitter] pixels for training patches.
  std::size_t jitter = 0;
  HypointensityRule rule;  // fallback segmenter
};

void validate(const SegmenterConfig& c);
void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);

struct SegmentationSample {
  std::string case_id;
  Patch2D patch;  // native resolution, 3 channels
  PlaneU8 truth;
  bool positive = false;
};

struct SegmentationDataset {
  std::vector<SegmentationSample> samples;
  std::size_t positives = 0, backgrounds = 0;
};

/// round(positives * background / lacune) background patches.
std::size_t background_count(std::size_t positives, const std::array<double, 2>& ratio);

/// Positive patches are centred on truth voxels, background patches on
/// subject-mask voxels without truth; both drawn with a seeded generator.
/// Cases are z-scored here; `subject_masks[i]` belongs to `cases[i]`.
SegmentationDataset sample_training_patches(const std::vector<MultiModalCase>& cases,
                                            const std::vector<Mask3D>& subject_masks, const SegmenterConfig& config);

struct SegmenterEpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0, train_dice = 0.0;
  std::optional<double> validation_loss, validation_dice;
};

class Segmenter {
 public:
  explicit Segmenter(SegmenterConfig config) : config_(std::move(config)) {}
  virtual ~Segmenter() = default;

  /// Probabilities in [0, 1] for a patch_size x patch_size, 3-channel patch.
  PlaneF predict_patch(const Patch2D& patch) const;

  virtual std::string kind() const = 0;
  virtual Checkpoint to_checkpoint() const;

  double threshold() const { return config_.threshold; }
  void set_threshold(double t);
  const SegmenterConfig& config() const { return config_; }

 protected:
  virtual PlaneF probabilities(const Patch2D& patch) const = 0;

  SegmenterConfig config_;
};

/// Hypointensity threshold followed by hole filling; outputs 0 or 1.
class RuleBasedSegmenter final : public Segmenter {
 public:
  explicit RuleBasedSegmenter(SegmenterConfig config);
  std::string kind() const override { return "rule-based"; }

 protected:
  PlaneF probabilities(const Patch2D& patch) const override;
};

/// Two-level U-Net: 3x3 conv pairs, max-pool downsampling, nearest
/// upsampling with concatenated skips, 1x1 logit head.
class UNetSegmenter final : public Segmenter {
 public:
  explicit UNetSegmenter(SegmenterConfig config);

  std::string kind() const override { return "unet"; }
  Checkpoint to_checkpoint() const override;
  void load_weights(const std::vector<float>& weights);

  /// Seeded training; the threshold is optimized on `validation` (or the
  /// training set when absent) if the config asks for it.
  void train(const SegmentationDataset& data, const SegmentationDataset* validation = nullptr);

  const std::vector<SegmenterEpochLog>& training_log() const { return log_; }

 protected:
  PlaneF probabilities(const Patch2D& patch) const override;

 private:
  struct Net {
    nn::Conv2d e1a, e1b, e2a, e2b, ba, bb, d2a, d2b, d1a, d1b, head;
    nn::ReLU r[10];
    nn::MaxPool2 p1, p2;
    std::size_t c1 = 0, c2 = 0, c3 = 0;

    nn::Tensor forward(const nn::Tensor& x);
    void backward(const nn::Tensor& grad_logits);
    std::vector<nn::Param*> parameters();
  };

  double sample_loss(const nn::Tensor& logits, const PlaneU8& truth, nn::Tensor* grad) const;
  std::pair<double, double> evaluate(const SegmentationDataset& data) const;

  Net net_;
  std::vector<SegmenterEpochLog> log_;
};

std::unique_ptr<Segmenter> make_segmenter(const SegmenterConfig& config);
std::unique_ptr<Segmenter> load_segmenter(const std::filesystem::path& checkpoint);

/// Thresholds k/20 for k = 1..19.
std::vector<double> threshold_grid();

/// Grid threshold maximizing mean Dice of (prob >= t) against truth; ties
/// go to the lowest threshold. Comparison happens in float.
double optimize_threshold(const std::vector<PlaneF>& probabilities, const std::vector<PlaneU8>& truths);

/// Mean Dice of (prob >= t) against truth for one threshold.
double mean_dice_at(const std::vector<PlaneF>& probabilities, const std::vector<PlaneU8>& truths, double t);

/// For every 26-connected candidate component and every slice it occupies,
/// segments one patch centred on the component's in-slice centroid (clamped
/// to the image) and OR-fuses the thresholded result. `c` must be z-scored.
Mask3D segment_candidates(const MultiModalCase& c, const Mask3D& candidates, const Segmenter& model);

}  // namespace lacune
