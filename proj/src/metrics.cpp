#include "lacune/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "lacune/components.hpp"

namespace lacune {

Box bounding_box(const PlaneU8& mask) {
  Box b{static_cast<long>(mask.rows), static_cast<long>(mask.cols), 0, 0};
  bool any = false;
  for (std::size_t r = 0; r < mask.rows; ++r)
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (!mask(r, c)) continue;
      any = true;
      b.row_min = std::min(b.row_min, static_cast<long>(r));
      b.col_min = std::min(b.col_min, static_cast<long>(c));
      b.row_max = std::max(b.row_max, static_cast<long>(r) + 1);
      b.col_max = std::max(b.col_max, static_cast<long>(c) + 1);
    }
  return any ? b : Box{};
}

namespace {

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

template <class Vec>
Overlap overlap(const Vec& a, const Vec& b) {
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    o.a += x;
    o.b += y;
    o.both += x && y;
  }
  return o;
}

double dice_of(const Overlap& o) {
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou_of(const Overlap& o) {
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

}  // namespace

double dice(const Mask3D& a, const Mask3D& b) {
  require(a.shape() == b.shape(), ErrorCode::shape_mismatch, "dice: geometry mismatch");
  return dice_of(overlap(a.data(), b.data()));
}

double dice(const PlaneU8& a, const PlaneU8& b) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorCode::shape_mismatch, "dice: geometry mismatch");
  return dice_of(overlap(a.data, b.data));
}

double iou(const Mask3D& a, const Mask3D& b) {
  require(a.shape() == b.shape(), ErrorCode::shape_mismatch, "iou: geometry mismatch");
  return iou_of(overlap(a.data(), b.data()));
}

double iou(const PlaneU8& a, const PlaneU8& b) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorCode::shape_mismatch, "iou: geometry mismatch");
  return iou_of(overlap(a.data, b.data));
}

double iou(const Box& a, const Box& b) {
  require(a.valid() && b.valid(), ErrorCode::invalid_argument, "iou: invalid box");
  const long h = std::min(a.row_max, b.row_max) - std::max(a.row_min, b.row_min);
  const long w = std::min(a.col_max, b.col_max) - std::max(a.col_min, b.col_min);
  const long inter = h > 0 && w > 0 ? h * w : 0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

std::string_view to_string(SizeClass c) {
  switch (c) {
    case SizeClass::small: return "small";
    case SizeClass::medium: return "medium";
    case SizeClass::large: return "large";
    case SizeClass::all: return "all";
  }
  return "?";
}

SizeClass size_class_of(double area) {
  if (area < 32.0 * 32.0) return SizeClass::small;
  if (area <= 96.0 * 96.0) return SizeClass::medium;
  return SizeClass::large;
}

bool in_class(double area, SizeClass c) { return c == SizeClass::all || size_class_of(area) == c; }

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 10; k <= 19; ++k) t.push_back(k / 20.0);
  return t;
}

namespace {

double pair_iou(const ScoredInstance& d, const TruthInstance& t, IouKind kind) {
  return kind == IouKind::box ? iou(d.box, t.box) : iou(d.mask, t.mask);
}

std::vector<std::size_t> score_order(const std::vector<ScoredInstance>& dets, std::size_t max_detections) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  if (order.size() > max_detections) order.resize(max_detections);
  return order;
}

std::size_t truths_in_class(const std::vector<ImageInstances>& images, SizeClass c) {
  std::size_t n = 0;
  for (const auto& im : images)
    for (const auto& t : im.truths) n += in_class(t.area, c);
  return n;
}

}  // namespace

std::vector<long> greedy_match(const ImageInstances& image, double iou_threshold, IouKind kind,
                               std::size_t max_detections) {
  std::vector<long> match(image.detections.size(), -1);
  std::vector<bool> taken(image.truths.size(), false);
  for (std::size_t d : score_order(image.detections, max_detections)) {
    long best = -1;
    double best_iou = -1.0;
    for (std::size_t t = 0; t < image.truths.size(); ++t) {
      if (taken[t]) continue;
      const double v = pair_iou(image.detections[d], image.truths[t], kind);
      if (v >= iou_threshold && v > best_iou) {
        best = static_cast<long>(t);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      match[d] = best;
    }
  }
  return match;
}

std::optional<double> average_precision(const std::vector<ImageInstances>& images, double iou_threshold,
                                        SizeClass size_class, IouKind kind, std::size_t max_detections) {
  const std::size_t n_truth = truths_in_class(images, size_class);
  if (n_truth == 0) return std::nullopt;

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> pooled;
  for (const auto& im : images) {
    const auto match = greedy_match(im, iou_threshold, kind, max_detections);
    for (std::size_t d : score_order(im.detections, max_detections)) {
      if (match[d] < 0) {
        pooled.push_back({im.detections[d].score, false});
      } else if (in_class(im.truths[static_cast<std::size_t>(match[d])].area, size_class)) {
        pooled.push_back({im.detections[d].score, true});
      }
    }
  }
  std::stable_sort(pooled.begin(), pooled.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  std::vector<double> recall{0.0}, precision{0.0};
  std::size_t tp = 0, fp = 0;
  for (const auto& s : pooled) {
    (s.tp ? tp : fp) += 1;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_truth));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  recall.push_back(1.0);
  precision.push_back(0.0);
  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

std::optional<double> average_precision_sweep(const std::vector<ImageInstances>& images, SizeClass size_class,
                                              IouKind kind, std::size_t max_detections) {
  double sum = 0.0;
  const auto thresholds = coco_iou_thresholds();
  for (double t : thresholds) {
    const auto ap = average_precision(images, t, size_class, kind, max_detections);
    if (!ap) return std::nullopt;
    sum += *ap;
  }
  return sum / static_cast<double>(thresholds.size());
}

std::optional<double> average_recall(const std::vector<ImageInstances>& images,
                                     const std::vector<double>& iou_thresholds, SizeClass size_class,
                                     IouKind kind, std::size_t max_detections) {
  require(!iou_thresholds.empty(), ErrorCode::invalid_argument, "average_recall needs IoU thresholds");
  const std::size_t n_truth = truths_in_class(images, size_class);
  if (n_truth == 0) return std::nullopt;
  double sum = 0.0;
  for (double thr : iou_thresholds) {
    std::size_t hit = 0;
    for (const auto& im : images) {
      const auto match = greedy_match(im, thr, kind, max_detections);
      for (long m : match)
        if (m >= 0 && in_class(im.truths[static_cast<std::size_t>(m)].area, size_class)) ++hit;
    }
    sum += static_cast<double>(hit) / static_cast<double>(n_truth);
  }
  return sum / static_cast<double>(iou_thresholds.size());
}

LesionCounts lesionwise_counts(const Mask3D& pred, const Mask3D& truth) {
  require(pred.shape() == truth.shape(), ErrorCode::shape_mismatch, "lesionwise: geometry mismatch");
  const Labeling3D lp = label_components(pred, Connectivity3D::full26);
  const Labeling3D lt = label_components(truth, Connectivity3D::full26);
  std::vector<bool> truth_hit(static_cast<std::size_t>(lt.count) + 1, false);
  std::vector<bool> pred_hit(static_cast<std::size_t>(lp.count) + 1, false);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (lp.labels[i] > 0 && lt.labels[i] > 0) {
      truth_hit[static_cast<std::size_t>(lt.labels[i])] = true;
      pred_hit[static_cast<std::size_t>(lp.labels[i])] = true;
    }
  }
  LesionCounts c;
  for (std::int32_t k = 1; k <= lt.count; ++k) (truth_hit[static_cast<std::size_t>(k)] ? c.tp : c.fn) += 1;
  for (std::int32_t k = 1; k <= lp.count; ++k) c.fp += pred_hit[static_cast<std::size_t>(k)] ? 0 : 1;
  return c;
}

std::vector<ImageInstances> slice_instances(const Mask3D& pred, const Mask3D& truth, double area_scale) {
  require(pred.shape() == truth.shape(), ErrorCode::shape_mismatch, "slice_instances: geometry mismatch");
  std::vector<ImageInstances> images;
  const auto split = [](const PlaneU8& plane) {
    const Labeling2D lab = label_components(plane, Connectivity2D::eight);
    std::vector<PlaneU8> parts;
    for (const auto& px : component_pixels(lab)) {
      PlaneU8 m(plane.rows, plane.cols, 0);
      for (auto i : px) m.data[i] = 1;
      parts.push_back(std::move(m));
    }
    return parts;
  };
  for (std::size_t z = 0; z < pred.shape().nz; ++z) {
    ImageInstances im;
    for (auto& m : split(axial_plane(pred, z))) {
      const Box b = bounding_box(m);
      im.detections.push_back({b, std::move(m), 1.0});
    }
    for (auto& m : split(axial_plane(truth, z))) {
      const Box b = bounding_box(m);
      const double area =
          static_cast<double>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1})) * area_scale;
      im.truths.push_back({b, std::move(m), area});
    }
    if (!im.detections.empty() || !im.truths.empty()) images.push_back(std::move(im));
  }
  return images;
}

namespace {

constexpr std::array<SizeClass, 4> kClasses = {SizeClass::small, SizeClass::medium, SizeClass::large, SizeClass::all};

void fill_detection_metrics(const std::vector<ImageInstances>& images, std::map<SizeClass, std::optional<double>>& ap50,
                            std::map<SizeClass, std::optional<double>>& ap,
                            std::map<SizeClass, std::optional<double>>& ar) {
  for (SizeClass c : kClasses) {
    ap50[c] = average_precision(images, 0.5, c, IouKind::mask);
    ap[c] = average_precision_sweep(images, c, IouKind::mask);
    ar[c] = average_recall(images, coco_iou_thresholds(), c, IouKind::mask);
  }
}

}  // namespace

CaseMetrics evaluate_case(const std::string& case_id, const Mask3D& pred, const Mask3D& truth, double area_scale) {
  CaseMetrics m;
  m.case_id = case_id;
  m.dice = dice(pred, truth);
  m.iou = iou(pred, truth);
  m.empty_pair = count_nonzero(pred) == 0 && count_nonzero(truth) == 0;
  m.lesions = lesionwise_counts(pred, truth);
  fill_detection_metrics(slice_instances(pred, truth, area_scale), m.ap50_by_size, m.ap_by_size, m.ar_by_size);
  return m;
}

MetricsReport aggregate(std::vector<CaseMetrics> cases, const std::vector<std::vector<ImageInstances>>& images) {
  MetricsReport r;
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  for (const auto& c : cases) {
    r.mean_dice += c.dice;
    r.mean_iou += c.iou;
    r.lesions.tp += c.lesions.tp;
    r.lesions.fp += c.lesions.fp;
    r.lesions.fn += c.lesions.fn;
  }
  if (!cases.empty()) {
    r.mean_dice /= static_cast<double>(cases.size());
    r.mean_iou /= static_cast<double>(cases.size());
  }
  std::vector<ImageInstances> pooled;
  for (const auto& v : images) pooled.insert(pooled.end(), v.begin(), v.end());
  fill_detection_metrics(pooled, r.ap50_by_size, r.ap_by_size, r.ar_by_size);
  r.cases = std::move(cases);
  return r;
}

}  // namespace lacune
