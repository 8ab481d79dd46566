#include "lacune/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lacune/components.hpp"
#include "lacune/json_util.hpp"

namespace lacune {

void validate(const DetectorConfig& c) {
  require(c.model == "learned" || c.model == "rule-based", ErrorCode::config,
          "detector model must be 'learned' or 'rule-based', got '" + c.model + "'");
  require(!c.anchor_sizes.empty() && !c.aspect_ratios.empty(), ErrorCode::config, "anchors must be non-empty");
  for (std::size_t i = 0; i < c.anchor_sizes.size(); ++i) {
    require(c.anchor_sizes[i] > 0, ErrorCode::config, "anchor sizes must be positive");
    require(i == 0 || c.anchor_sizes[i] > c.anchor_sizes[i - 1], ErrorCode::config,
            "anchor sizes must be strictly ascending");
  }
  for (double r : c.aspect_ratios) require(r > 0, ErrorCode::config, "aspect ratios must be positive");
  require(c.score_threshold >= 0 && c.score_threshold <= 1, ErrorCode::config, "score_threshold must lie in [0, 1]");
  require(c.hflip_probability >= 0 && c.hflip_probability <= 1, ErrorCode::config,
          "hflip_probability must lie in [0, 1]");
  require(c.batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(c.upsample_factor >= 1, ErrorCode::config, "upsample_factor must be >= 1");
  require(c.patch_size >= 8 && c.patch_size % 2 == 0, ErrorCode::config, "patch_size must be even and >= 8");
  require(c.overlap >= 0 && c.overlap < 1, ErrorCode::config, "overlap must lie in [0, 1)");
  require(c.learning_rate > 0, ErrorCode::config, "learning_rate must be positive");
  require(c.base_channels >= 1, ErrorCode::config, "base_channels must be >= 1");
  require(c.nms_iou > 0 && c.nms_iou <= 1, ErrorCode::config, "nms_iou must lie in (0, 1]");
  require(c.max_detections >= 1, ErrorCode::config, "max_detections must be >= 1");
  const auto& r = c.rule_based;
  require(r.min_diameter_mm > 0 && r.min_diameter_mm <= r.max_diameter_mm, ErrorCode::config,
          "rule-based diameter range must satisfy 0 < min <= max");
  require(r.diameter_tolerance_mm >= 0, ErrorCode::config, "diameter tolerance must be >= 0");
  require(r.inplane_elongation >= 1, ErrorCode::config, "inplane_elongation must be >= 1");
}

void to_json(nlohmann::json& j, const DetectorConfig& c) {
  const auto& r = c.rule_based;
  j = {{"model", c.model},
       {"anchor_sizes", c.anchor_sizes},
       {"aspect_ratios", c.aspect_ratios},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"score_threshold", c.score_threshold},
       {"hflip_probability", c.hflip_probability},
       {"upsample_factor", c.upsample_factor},
       {"patch_size", c.patch_size},
       {"overlap", c.overlap},
       {"seed", c.seed},
       {"learning_rate", c.learning_rate},
       {"base_channels", c.base_channels},
       {"nms_iou", c.nms_iou},
       {"max_detections", c.max_detections},
       {"rule_based",
        {{"flair_drop", r.rule.flair_drop},
         {"t1_drop", r.rule.t1_drop},
         {"min_diameter_mm", r.min_diameter_mm},
         {"max_diameter_mm", r.max_diameter_mm},
         {"diameter_tolerance_mm", r.diameter_tolerance_mm},
         {"inplane_elongation", r.inplane_elongation},
         {"reject_border_components", r.reject_border_components}}}};
}

void from_json(const nlohmann::json& j, DetectorConfig& c) {
  reject_unknown_keys(j,
                      {"model", "anchor_sizes", "aspect_ratios", "batch_size", "epochs", "score_threshold",
                       "hflip_probability", "upsample_factor", "patch_size", "overlap", "seed", "learning_rate",
                       "base_channels", "nms_iou", "max_detections", "rule_based"},
                      "detector config");
  read_optional(j, "model", c.model);
  read_optional(j, "anchor_sizes", c.anchor_sizes);
  read_optional(j, "aspect_ratios", c.aspect_ratios);
  read_optional(j, "batch_size", c.batch_size);
  read_optional(j, "epochs", c.epochs);
  read_optional(j, "score_threshold", c.score_threshold);
  read_optional(j, "hflip_probability", c.hflip_probability);
  read_optional(j, "upsample_factor", c.upsample_factor);
  read_optional(j, "patch_size", c.patch_size);
  read_optional(j, "overlap", c.overlap);
  read_optional(j, "seed", c.seed);
  read_optional(j, "learning_rate", c.learning_rate);
  read_optional(j, "base_channels", c.base_channels);
  read_optional(j, "nms_iou", c.nms_iou);
  read_optional(j, "max_detections", c.max_detections);
  if (j.contains("rule_based")) {
    const auto& r = j.at("rule_based");
    reject_unknown_keys(r,
                        {"flair_drop", "t1_drop", "min_diameter_mm", "max_diameter_mm", "diameter_tolerance_mm",
                         "inplane_elongation", "reject_border_components"},
                        "detector rule_based config");
    auto& o = c.rule_based;
    read_optional(r, "flair_drop", o.rule.flair_drop);
    read_optional(r, "t1_drop", o.rule.t1_drop);
    read_optional(r, "min_diameter_mm", o.min_diameter_mm);
    read_optional(r, "max_diameter_mm", o.max_diameter_mm);
    read_optional(r, "diameter_tolerance_mm", o.diameter_tolerance_mm);
    read_optional(r, "inplane_elongation", o.inplane_elongation);
    read_optional(r, "reject_border_components", o.reject_border_components);
  }
  validate(c);
}

namespace {

PlaneU8 upsample_mask(const PlaneU8& m, std::size_t f) {
  PlaneU8 out(m.rows * f, m.cols * f);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = m(r / f, c / f);
  return out;
}

Box scale(const Box& b, long f) { return {b.row_min * f, b.col_min * f, b.row_max * f, b.col_max * f}; }

float median_of(const PlaneF& p) {
  std::vector<float> v = p.data;
  auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

Patch2D DetectionDataset::upsampled_patch(std::size_t i) const {
  return upsample_nn(samples.at(i).patch, upsample_factor);
}

std::vector<TruthObject> DetectionDataset::upsampled_instances(std::size_t i) const {
  std::vector<TruthObject> out;
  for (const auto& t : samples.at(i).instances)
    out.push_back({scale(t.bbox, static_cast<long>(upsample_factor)), upsample_mask(t.mask, upsample_factor)});
  return out;
}

DetectionDataset build_training_set(const std::vector<MultiModalCase>& cases, const DetectorConfig& config) {
  validate(config);
  DetectionDataset ds;
  ds.upsample_factor = config.upsample_factor;
  for (const auto& raw : cases) {
    require(raw.truth.has_value(), ErrorCode::invalid_argument, "case " + raw.case_id + " has no truth mask");
    const MultiModalCase c = normalize_case(raw);
    const PatchGrid grid = compute_grid(c.shape().ny, c.shape().nx, config.patch_size, config.overlap);
    for (std::size_t z = 0; z < c.shape().nz; ++z) {
      const PlaneU8 truth = axial_plane(*c.truth, z);
      if (std::none_of(truth.data.begin(), truth.data.end(), [](auto v) { return v != 0; })) continue;
      const auto pixels = component_pixels(label_components(truth, Connectivity2D::eight));
      for (Patch2D& p : extract_patches(slice_stack(c, z), grid)) {
        DetectionSample s{c.case_id, std::move(p), {}};
        const std::size_t S = config.patch_size;
        for (const auto& comp : pixels) {
          PlaneU8 m(S, S);
          bool any = false;
          for (std::size_t idx : comp) {
            const std::size_t r = idx / truth.cols, col = idx % truth.cols;
            if (r < s.patch.origin.row || r >= s.patch.origin.row + S || col < s.patch.origin.col ||
                col >= s.patch.origin.col + S)
              continue;
            m(r - s.patch.origin.row, col - s.patch.origin.col) = 1;
            any = true;
          }
          if (any) s.instances.push_back({bounding_box(m), std::move(m)});
        }
        ds.samples.push_back(std::move(s));
      }
    }
  }
  require(!ds.samples.empty(), ErrorCode::empty_input, "no slices with lacunes in any training case");
  return ds;
}

Patch2D hflip(const Patch2D& p) {
  Patch2D out = p;
  for (auto& ch : out.channels)
    for (std::size_t r = 0; r < ch.rows; ++r) std::reverse(ch.data.begin() + r * ch.cols, ch.data.begin() + (r + 1) * ch.cols);
  return out;
}

TruthObject hflip(const TruthObject& t, std::size_t size) {
  TruthObject out = t;
  for (std::size_t r = 0; r < out.mask.rows; ++r)
    std::reverse(out.mask.data.begin() + r * out.mask.cols, out.mask.data.begin() + (r + 1) * out.mask.cols);
  const long s = static_cast<long>(size);
  out.bbox.col_min = s - t.bbox.col_max;
  out.bbox.col_max = s - t.bbox.col_min;
  return out;
}

// ---------------------------------------------------------------- Detector

std::vector<Detection> Detector::detect(const Patch2D& patch) const {
  const std::size_t S = config_.patch_size * config_.upsample_factor;
  require(patch.channels.size() == 3, ErrorCode::shape_mismatch,
          "detector expects 3 channels, got " + std::to_string(patch.channels.size()));
  for (const auto& ch : patch.channels)
    require(ch.rows == S && ch.cols == S, ErrorCode::shape_mismatch,
            "detector expects " + std::to_string(S) + "x" + std::to_string(S) + " planes, got " +
                std::to_string(ch.rows) + "x" + std::to_string(ch.cols));
  std::vector<Detection> out;
  for (Detection& d : propose(patch)) {
    if (d.score < config_.score_threshold) continue;
    d.patch_origin = patch.origin;
    d.slice_index = patch.slice_index;
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

Checkpoint Detector::to_checkpoint() const {
  Checkpoint c;
  c.kind = kind();
  c.metadata["config"] = config_;
  return c;
}

RuleBasedDetector::RuleBasedDetector(DetectorConfig config) : Detector(std::move(config)) {
  config_.model = "rule-based";
  validate(config_);
}

std::vector<Detection> RuleBasedDetector::propose(const Patch2D& patch) const {
  return rule_based_detect(patch, config_.rule_based);
}

PlaneU8 hypointense_pixels(const PlaneF& t1, const PlaneF& flair, const HypointensityRule& rule) {
  require(t1.rows == flair.rows && t1.cols == flair.cols, ErrorCode::shape_mismatch, "T1/FLAIR plane mismatch");
  PlaneU8 out(t1.rows, t1.cols);
  if (t1.data.empty()) return out;
  const float ft = static_cast<float>(median_of(flair) - rule.flair_drop);
  const float tt = static_cast<float>(median_of(t1) - rule.t1_drop);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = flair.data[i] < ft && t1.data[i] < tt ? 1 : 0;
  return out;
}

std::vector<Detection> rule_based_detect(const Patch2D& patch, const RuleBasedParams& params) {
  require(patch.channels.size() == 3, ErrorCode::shape_mismatch, "rule-based detector expects 3 channels");
  const PlaneF& t1 = patch.channels[0];
  const PlaneF& flair = patch.channels[2];
  const PlaneU8 dark = hypointense_pixels(t1, flair, params.rule);
  const auto [fmin, fmax] = std::minmax_element(flair.data.begin(), flair.data.end());
  const double range = static_cast<double>(*fmax) - *fmin;

  const Labeling2D lab = label_components(dark, Connectivity2D::eight);
  const double lo = params.min_diameter_mm - params.diameter_tolerance_mm;
  const double hi = params.max_diameter_mm * params.inplane_elongation + params.diameter_tolerance_mm;
  std::vector<Detection> out;
  for (const auto& comp : component_pixels(lab)) {
    const double area_mm2 = static_cast<double>(comp.size()) * patch.pixel_mm * patch.pixel_mm;
    const double diameter = 2.0 * std::sqrt(area_mm2 / std::numbers::pi);
    if (diameter < lo || diameter > hi) continue;
    Detection d;
    d.mask = PlaneU8(dark.rows, dark.cols);
    bool border = false;
    double sum = 0.0;
    for (std::size_t idx : comp) {
      const std::size_t r = idx / dark.cols, c = idx % dark.cols;
      border = border || r == 0 || c == 0 || r + 1 == dark.rows || c + 1 == dark.cols;
      d.mask.data[idx] = 1;
      sum += flair.data[idx];
    }
    if (border && params.reject_border_components) continue;
    d.bbox = bounding_box(d.mask);
    const double mean = sum / static_cast<double>(comp.size());
    d.score = range > 0 ? std::clamp(1.0 - (mean - *fmin) / range, 0.0, 1.0) : 0.0;
    out.push_back(std::move(d));
  }
  return out;
}

// --------------------------------------------------------- LearnedDetector

namespace {

constexpr double kPositiveIou = 0.5;
constexpr double kNegativeIou = 0.3;
constexpr std::size_t kPreNmsTop = 1000;

Box anchor_box(const LearnedDetector::Anchor& a) {
  return {static_cast<long>(std::floor(a.cy - a.h / 2)), static_cast<long>(std::floor(a.cx - a.w / 2)),
          static_cast<long>(std::ceil(a.cy + a.h / 2)), static_cast<long>(std::ceil(a.cx + a.w / 2))};
}

double smooth_l1(double x, double& grad) {
  const double ax = std::abs(x);
  if (ax < 1.0) {
    grad = x;
    return 0.5 * x * x;
  }
  grad = x > 0 ? 1.0 : -1.0;
  return ax - 0.5;
}

// Encodes a target box relative to an anchor as (dy, dx, log dh, log dw).
std::array<double, 4> encode(const LearnedDetector::Anchor& a, const Box& b) {
  const double h = static_cast<double>(b.row_max - b.row_min), w = static_cast<double>(b.col_max - b.col_min);
  const double cy = b.row_min + h / 2, cx = b.col_min + w / 2;
  return {(cy - a.cy) / a.h, (cx - a.cx) / a.w, std::log(h / a.h), std::log(w / a.w)};
}

Box decode(const LearnedDetector::Anchor& a, const float* d, long size) {
  const double cy = a.cy + d[0] * a.h, cx = a.cx + d[1] * a.w;
  const double h = a.h * std::exp(std::clamp<double>(d[2], -6, 6)), w = a.w * std::exp(std::clamp<double>(d[3], -6, 6));
  Box b{static_cast<long>(std::floor(cy - h / 2)), static_cast<long>(std::floor(cx - w / 2)),
        static_cast<long>(std::ceil(cy + h / 2)), static_cast<long>(std::ceil(cx + w / 2))};
  b.row_min = std::clamp(b.row_min, 0L, size);
  b.col_min = std::clamp(b.col_min, 0L, size);
  b.row_max = std::clamp(b.row_max, 0L, size);
  b.col_max = std::clamp(b.col_max, 0L, size);
  return b;
}

nn::Tensor to_tensor(const Patch2D& p) {
  const std::size_t S = p.channels[0].rows;
  nn::Tensor t(p.channels.size(), S, S);
  for (std::size_t c = 0; c < p.channels.size(); ++c)
    std::copy(p.channels[c].data.begin(), p.channels[c].data.end(), t.v.begin() + static_cast<long>(c * S * S));
  return t;
}

}  // namespace

LearnedDetector::LearnedDetector(DetectorConfig config) : Detector(std::move(config)) {
  config_.model = "learned";
  validate(config_);
  std::mt19937_64 rng(config_.seed);
  const std::size_t C = config_.base_channels;
  const std::size_t A = config_.anchor_sizes.size() * config_.aspect_ratios.size();
  net_.c1 = nn::Conv2d(3, C, 3, rng);
  net_.c2 = nn::Conv2d(C, C, 3, rng);
  net_.c3 = nn::Conv2d(C, 2 * C, 3, rng);
  net_.rpn = nn::Conv2d(2 * C, 5 * A, 1, rng);
  net_.mask = nn::Conv2d(C, 1, 1, rng);
  net_.factor = config_.upsample_factor;
  build_anchors();
}

void LearnedDetector::build_anchors() {
  grid_ = config_.patch_size / 2;
  const double stride = 2.0 * static_cast<double>(config_.upsample_factor);
  anchors_.clear();
  for (int s : config_.anchor_sizes)
    for (double r : config_.aspect_ratios)
      for (std::size_t gy = 0; gy < grid_; ++gy)
        for (std::size_t gx = 0; gx < grid_; ++gx)
          anchors_.push_back({(static_cast<double>(gy) + 0.5) * stride, (static_cast<double>(gx) + 0.5) * stride,
                              s * std::sqrt(r), s / std::sqrt(r)});
}

LearnedDetector::Net::Heads LearnedDetector::Net::forward(const nn::Tensor& input) {
  nn::Tensor x = nn::avg_pool(input, factor);
  nn::Tensor f1 = r2.forward(c2.forward(r1.forward(c1.forward(x))));
  Heads h;
  h.mask = mask.forward(f1);
  h.rpn = rpn.forward(r3.forward(c3.forward(pool.forward(f1))));
  return h;
}

void LearnedDetector::Net::backward(const nn::Tensor& grad_rpn, const nn::Tensor& grad_mask) {
  nn::Tensor g = pool.backward(c3.backward(r3.backward(rpn.backward(grad_rpn))));
  nn::add_inplace(g, mask.backward(grad_mask));
  c1.backward(r1.backward(c2.backward(r2.backward(g))));
}

std::vector<nn::Param*> LearnedDetector::Net::parameters() {
  std::vector<nn::Param*> out;
  for (nn::Conv2d* c : {&c1, &c2, &c3, &rpn, &mask})
    for (nn::Param* p : c->parameters()) out.push_back(p);
  return out;
}

double LearnedDetector::accumulate_sample(const Patch2D& patch, const std::vector<TruthObject>& truth) {
  const Net::Heads h = net_.forward(to_tensor(patch));
  const std::size_t A = anchors_.size() / (grid_ * grid_), GG = grid_ * grid_;
  nn::Tensor g_rpn(h.rpn.c, h.rpn.h, h.rpn.w), g_mask(1, h.mask.h, h.mask.w);

  // Anchor labelling: 1 positive, 0 negative, -1 ignored.
  std::vector<int> label(anchors_.size(), 0);
  std::vector<int> target(anchors_.size(), -1);
  std::vector<double> best_iou(anchors_.size(), 0.0);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
      const double v = iou(anchor_box(anchors_[i]), truth[t].bbox);
      if (v > best_v) best_v = v, best = i;
      if (v > best_iou[i]) best_iou[i] = v, target[i] = static_cast<int>(t);
    }
    best_iou[best] = std::max(best_iou[best], kPositiveIou);
    target[best] = static_cast<int>(t);
  }
  std::size_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    label[i] = best_iou[i] >= kPositiveIou ? 1 : best_iou[i] < kNegativeIou ? 0 : -1;
    npos += label[i] == 1;
    nneg += label[i] == 0;
  }

  double loss = 0.0;
  // Class-balanced objectness loss.
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (label[i] < 0) continue;
    const std::size_t a = i / GG, cell = i % GG;
    const float z = h.rpn.v[a * GG + cell];
    const float y = static_cast<float>(label[i]);
    const double w = label[i] == 1 ? 0.5 / static_cast<double>(npos) : (npos ? 0.5 : 1.0) / static_cast<double>(nneg);
    loss += w * (std::max(z, 0.0f) - z * y + std::log1p(std::exp(-std::abs(z))));
    g_rpn.v[a * GG + cell] += static_cast<float>(w * (nn::sigmoid(z) - y));
  }
  // Box regression on positives.
  for (std::size_t i = 0; i < anchors_.size() && npos; ++i) {
    if (label[i] != 1) continue;
    const std::size_t a = i / GG, cell = i % GG;
    const auto tgt = encode(anchors_[i], truth[static_cast<std::size_t>(target[i])].bbox);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t idx = (A + a * 4 + k) * GG + cell;
      double g = 0.0;
      loss += smooth_l1(h.rpn.v[idx] - tgt[k], g) / static_cast<double>(npos);
      g_rpn.v[idx] += static_cast<float>(g / static_cast<double>(npos));
    }
  }
  // Mask head against the union of instances at native resolution.
  std::vector<float> mask_target(h.mask.v.size(), 0.0f);
  const std::size_t f = net_.factor, S = h.mask.h;
  for (const auto& t : truth)
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c)
        if (t.mask(r * f, c * f)) mask_target[r * S + c] = 1.0f;
  loss += nn::bce_with_logits(h.mask.v, mask_target, g_mask.v, 10.0f);

  net_.backward(g_rpn, g_mask);
  return loss;
}

void LearnedDetector::train(const DetectionDataset& data) {
  require(!data.samples.empty(), ErrorCode::empty_input, "empty detection dataset");
  require(data.upsample_factor == config_.upsample_factor, ErrorCode::config,
          "dataset upsample factor differs from detector config");
  std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
  std::bernoulli_distribution flip(config_.hflip_probability);
  nn::Adam adam({static_cast<float>(config_.learning_rate)});
  const auto params = net_.parameters();
  std::vector<std::size_t> order(data.samples.size());
  const std::size_t S = config_.patch_size * config_.upsample_factor;
  log_.clear();
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::vector<double> batch_losses;
    for (std::size_t b = 0; b < order.size(); b += config_.batch_size) {
      const std::size_t e = std::min(order.size(), b + config_.batch_size);
      double batch = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        Patch2D p = data.upsampled_patch(order[k]);
        auto truth = data.upsampled_instances(order[k]);
        if (flip(rng)) {
          p = hflip(p);
          for (auto& t : truth) t = hflip(t, S);
        }
        const double l = accumulate_sample(p, truth);
        if (!std::isfinite(l))
          fail(ErrorCode::training_diverged, "non-finite detector loss at epoch " + std::to_string(epoch + 1) +
                                                 ", sample " + data.samples[order[k]].case_id + " slice " +
                                                 std::to_string(data.samples[order[k]].patch.slice_index));
        batch += l;
      }
      adam.step(params, static_cast<float>(e - b));
      batch_losses.push_back(batch / static_cast<double>(e - b));
      total += batch;
    }
    std::sort(batch_losses.begin(), batch_losses.end());
    log_.push_back({epoch + 1, total / static_cast<double>(order.size()), batch_losses[batch_losses.size() / 2]});
  }
}

std::vector<Detection> LearnedDetector::propose(const Patch2D& patch) const {
  Net net = net_;
  const Net::Heads h = net.forward(to_tensor(patch));
  const std::size_t GG = grid_ * grid_, A = anchors_.size() / GG;
  const long S = static_cast<long>(config_.patch_size * config_.upsample_factor);

  std::vector<std::size_t> idx(anchors_.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto logit = [&](std::size_t i) { return h.rpn.v[(i / GG) * GG + i % GG]; };
  const std::size_t top = std::min(kPreNmsTop, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(top), idx.end(), [&](std::size_t a, std::size_t b) {
    return logit(a) != logit(b) ? logit(a) > logit(b) : a < b;
  });
  idx.resize(top);

  std::vector<Box> kept;
  std::vector<double> scores;
  for (std::size_t i : idx) {
    const std::size_t a = i / GG, cell = i % GG;
    float d[4];
    for (std::size_t k = 0; k < 4; ++k) d[k] = h.rpn.v[(A + a * 4 + k) * GG + cell];
    const Box b = decode(anchors_[i], d, S);
    if (!b.valid()) continue;
    if (std::any_of(kept.begin(), kept.end(), [&](const Box& k) { return iou(k, b) > config_.nms_iou; })) continue;
    kept.push_back(b);
    scores.push_back(nn::sigmoid(logit(i)));
    if (kept.size() == config_.max_detections) break;
  }

  const std::size_t f = config_.upsample_factor;
  std::vector<Detection> out;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    Detection d;
    d.score = scores[k];
    d.mask = PlaneU8(static_cast<std::size_t>(S), static_cast<std::size_t>(S));
    const Box& b = kept[k];
    bool any = false;
    for (long r = b.row_min; r < b.row_max; ++r)
      for (long c = b.col_min; c < b.col_max; ++c)
        if (nn::sigmoid(h.mask.v[(static_cast<std::size_t>(r) / f) * h.mask.w + static_cast<std::size_t>(c) / f]) >= 0.5f)
          d.mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1, any = true;
    if (!any)
      for (long r = b.row_min; r < b.row_max; ++r)
        for (long c = b.col_min; c < b.col_max; ++c) d.mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
    d.bbox = bounding_box(d.mask);
    out.push_back(std::move(d));
  }
  return out;
}

Checkpoint LearnedDetector::to_checkpoint() const {
  Checkpoint c = Detector::to_checkpoint();
  Net copy = net_;
  c.weights = nn::flatten(copy.parameters());
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : log_) log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"median_batch_loss", e.median_batch_loss}});
  c.metadata["training_log"] = log;
  c.metadata["epochs_run"] = log_.size();
  c.metadata["final_loss"] = log_.empty() ? nlohmann::json(nullptr) : nlohmann::json(log_.back().loss);
  return c;
}

void LearnedDetector::load_weights(const std::vector<float>& weights) { nn::unflatten(net_.parameters(), weights); }

std::unique_ptr<Detector> make_detector(const DetectorConfig& config) {
  if (config.model == "rule-based") return std::make_unique<RuleBasedDetector>(config);
  return std::make_unique<LearnedDetector>(config);
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  require(c.metadata.contains("config"), ErrorCode::parse, "detector checkpoint lacks a config echo");
  DetectorConfig config = c.metadata.at("config").get<DetectorConfig>();
  if (c.kind == "rule-based") {
    config.model = "rule-based";
    return std::make_unique<RuleBasedDetector>(config);
  }
  require(c.kind == "learned", ErrorCode::parse, "checkpoint kind '" + c.kind + "' is not a detector");
  config.model = "learned";
  auto d = std::make_unique<LearnedDetector>(config);
  d->load_weights(c.weights);
  return d;
}

Mask3D candidates_from_detections(const std::vector<Detection>& detections, const Shape3& shape,
                                  const Spacing3& spacing, std::size_t upsample_factor) {
  Mask3D out(shape, spacing, 0);
  for (const auto& d : detections) {
    require(d.slice_index < shape.nz, ErrorCode::out_of_range,
            "detection slice " + std::to_string(d.slice_index) + " outside volume");
    const PlaneU8 m = downsample_mask_nn(d.mask, upsample_factor);
    require(d.patch_origin.row + m.rows <= shape.ny && d.patch_origin.col + m.cols <= shape.nx, ErrorCode::out_of_range,
            "detection patch at (" + std::to_string(d.patch_origin.row) + ", " + std::to_string(d.patch_origin.col) +
                ") extends outside the volume");
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c)
        if (m(r, c)) out(d.patch_origin.col + c, d.patch_origin.row + r, d.slice_index) = 1;
  }
  return out;
}

}  // namespace lacune
