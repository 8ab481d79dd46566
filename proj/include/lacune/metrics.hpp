#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lacune/volume.hpp"

namespace lacune {

/// Half-open pixel box [row_min, row_max) x [col_min, col_max).
struct Box {
  long row_min = 0, col_min = 0, row_max = 0, col_max = 0;

  bool valid() const { return row_min < row_max && col_min < col_max; }
  long area() const { return (row_max - row_min) * (col_max - col_min); }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Tight box around the nonzero pixels; invalid (all zero) if the mask is empty.
Box bounding_box(const PlaneU8& mask);

/// 2|a n b| / (|a| + |b|); empty vs empty is 1.
double dice(const Mask3D& a, const Mask3D& b);
double dice(const PlaneU8& a, const PlaneU8& b);

/// |a n b| / |a u b|; empty vs empty is 1.
double iou(const Mask3D& a, const Mask3D& b);
double iou(const PlaneU8& a, const PlaneU8& b);
double iou(const Box& a, const Box& b);

enum class SizeClass { small, medium, large, all };

std::string_view to_string(SizeClass c);

/// small: area < 32^2, medium: 32^2 <= area <= 96^2, large: area > 96^2.
SizeClass size_class_of(double area);
bool in_class(double area, SizeClass c);

enum class IouKind { box, mask };

struct ScoredInstance {
  Box box;
  PlaneU8 mask;
  double score = 0.0;
};

struct TruthInstance {
  Box box;
  PlaneU8 mask;
  double area = 0.0;
};

/// Detections and truths of one image (one patch or slice).
struct ImageInstances {
  std::vector<ScoredInstance> detections;
  std::vector<TruthInstance> truths;
};

inline constexpr std::size_t kDefaultMaxDetections = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

/// Greedy score-descending matching per image, all-point interpolated area
/// under the pooled precision/recall curve. Detections matched to truths
/// outside the size class are ignored; unmatched detections are false
/// positives in every class. nullopt when the class has no truths.
std::optional<double> average_precision(const std::vector<ImageInstances>& images, double iou_threshold,
                                        SizeClass size_class, IouKind kind = IouKind::box,
                                        std::size_t max_detections = kDefaultMaxDetections);

/// Mean of AP over coco_iou_thresholds().
std::optional<double> average_precision_sweep(const std::vector<ImageInstances>& images, SizeClass size_class,
                                              IouKind kind = IouKind::box,
                                              std::size_t max_detections = kDefaultMaxDetections);

/// Recall of the greedy matching, averaged over `iou_thresholds`.
std::optional<double> average_recall(const std::vector<ImageInstances>& images,
                                     const std::vector<double>& iou_thresholds, SizeClass size_class,
                                     IouKind kind = IouKind::box,
                                     std::size_t max_detections = kDefaultMaxDetections);

/// Per-detection outcome of the greedy matcher: index of the matched truth
/// or -1. Exposed so callers can inspect the assignment.
std::vector<long> greedy_match(const ImageInstances& image, double iou_threshold, IouKind kind,
                               std::size_t max_detections = kDefaultMaxDetections);

struct LesionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  friend bool operator==(const LesionCounts&, const LesionCounts&) = default;
};

/// 26-connected components. A truth component is a TP iff any predicted
/// voxel overlaps it; a predicted component touching no truth is an FP.
LesionCounts lesionwise_counts(const Mask3D& pred, const Mask3D& truth);

/// One image per axial slice with 8-connected in-plane components as
/// instances (detections scored 1). Areas are multiplied by `area_scale`.
std::vector<ImageInstances> slice_instances(const Mask3D& pred, const Mask3D& truth, double area_scale);

struct CaseMetrics {
  std::string case_id;
  double dice = 0.0;
  double iou = 0.0;
  bool empty_pair = false;  // both masks empty; dice/iou set to 1 by convention
  std::map<SizeClass, std::optional<double>> ap50_by_size, ap_by_size, ar_by_size;
  LesionCounts lesions;
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;  // sorted by case_id
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  std::map<SizeClass, std::optional<double>> ap50_by_size, ap_by_size, ar_by_size;
  LesionCounts lesions;
};

/// `area_scale` maps in-plane voxel areas into the detector's upsampled
/// patch space (factor^2) where the size classes are defined.
CaseMetrics evaluate_case(const std::string& case_id, const Mask3D& pred, const Mask3D& truth,
                          double area_scale = 16.0);

/// Aggregates pooled AP/AR over all slices of all cases.
MetricsReport aggregate(std::vector<CaseMetrics> cases, const std::vector<std::vector<ImageInstances>>& images);

}  // namespace lacune
