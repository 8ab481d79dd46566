#include "lacune/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "lacune/components.hpp"
#include "lacune/json_util.hpp"
#include "lacune/metrics.hpp"

namespace lacune {

void validate(const SegmenterConfig& c) {
  require(c.model == "unet" || c.model == "rule-based", ErrorCode::config,
          "segmenter model must be 'unet' or 'rule-based', got '" + c.model + "'");
  require(c.patch_size >= 4 && c.patch_size % 4 == 0, ErrorCode::config, "segmenter patch_size must be a multiple of 4");
  require(c.overlap >= 0 && c.overlap < 1, ErrorCode::config, "overlap must lie in [0, 1)");
  const auto& r = c.lacune_background_ratio;
  require(r[0] > 0 && r[1] > 0 && std::abs(r[0] + r[1] - 1.0) < 1e-9, ErrorCode::config,
          "lacune_background_ratio components must be positive and sum to 1");
  require(c.threshold >= 0 && c.threshold <= 1, ErrorCode::config, "threshold must lie in [0, 1]");
  require(c.loss == "dice" || c.loss == "dice_bce", ErrorCode::config, "loss must be 'dice' or 'dice_bce'");
  require(c.learning_rate > 0, ErrorCode::config, "learning_rate must be positive");
  require(c.batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(c.base_channels >= 1, ErrorCode::config, "base_channels must be >= 1");
}

void to_json(nlohmann::json& j, const SegmenterConfig& c) {
  j = {{"model", c.model},
       {"patch_size", c.patch_size},
       {"overlap", c.overlap},
       {"lacune_background_ratio", c.lacune_background_ratio},
       {"epochs", c.epochs},
       {"threshold", c.optimize_threshold ? nlohmann::json("optimize") : nlohmann::json(c.threshold)},
       {"seed", c.seed},
       {"base_channels", c.base_channels},
       {"loss", c.loss},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"max_positive_patches", c.max_positive_patches},
       {"jitter", c.jitter},
       {"rule", {{"flair_drop", c.rule.flair_drop}, {"t1_drop", c.rule.t1_drop}}}};
}

void from_json(const nlohmann::json& j, SegmenterConfig& c) {
  reject_unknown_keys(j,
                      {"model", "patch_size", "overlap", "lacune_background_ratio", "epochs", "threshold", "seed",
                       "base_channels", "loss", "learning_rate", "batch_size", "max_positive_patches", "jitter", "rule"},
                      "segmenter config");
  read_optional(j, "model", c.model);
  read_optional(j, "patch_size", c.patch_size);
  read_optional(j, "overlap", c.overlap);
  read_optional(j, "lacune_background_ratio", c.lacune_background_ratio);
  read_optional(j, "epochs", c.epochs);
  read_optional(j, "seed", c.seed);
  read_optional(j, "base_channels", c.base_channels);
  read_optional(j, "loss", c.loss);
  read_optional(j, "learning_rate", c.learning_rate);
  read_optional(j, "batch_size", c.batch_size);
  read_optional(j, "max_positive_patches", c.max_positive_patches);
  read_optional(j, "jitter", c.jitter);
  if (j.contains("threshold")) {
    const auto& t = j.at("threshold");
    if (t.is_string()) {
      require(t.get<std::string>() == "optimize", ErrorCode::config, "threshold must be a number or \"optimize\"");
      c.optimize_threshold = true;
    } else {
      read_optional(j, "threshold", c.threshold);
      c.optimize_threshold = false;
    }
  }
  if (j.contains("rule")) {
    reject_unknown_keys(j.at("rule"), {"flair_drop", "t1_drop"}, "segmenter rule config");
    read_optional(j.at("rule"), "flair_drop", c.rule.flair_drop);
    read_optional(j.at("rule"), "t1_drop", c.rule.t1_drop);
  }
  validate(c);
}

std::size_t background_count(std::size_t positives, const std::array<double, 2>& ratio) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(positives) * ratio[1] / ratio[0]));
}

namespace {

struct Site {
  std::size_t case_index, voxel;
};

PlaneU8 crop_mask(const PlaneU8& m, PixelOrigin o, std::size_t size) {
  PlaneU8 out(size, size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) out(r, c) = m(o.row + r, o.col + c);
  return out;
}

}  // namespace

SegmentationDataset sample_training_patches(const std::vector<MultiModalCase>& cases,
                                            const std::vector<Mask3D>& subject_masks, const SegmenterConfig& config) {
  validate(config);
  require(cases.size() == subject_masks.size(), ErrorCode::invalid_argument,
          "need one subject mask per training case");
  std::vector<MultiModalCase> norm;
  std::vector<Site> pos, bg;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    require(cases[i].truth.has_value(), ErrorCode::invalid_argument, "case " + cases[i].case_id + " has no truth");
    require(subject_masks[i].same_geometry(cases[i].t1), ErrorCode::shape_mismatch,
            "subject mask geometry differs from case " + cases[i].case_id);
    norm.push_back(normalize_case(cases[i]));
    const Mask3D& t = *cases[i].truth;
    for (std::size_t v = 0; v < t.size(); ++v) {
      if (t[v]) pos.push_back({i, v});
      else if (subject_masks[i][v]) bg.push_back({i, v});
    }
  }
  require(!pos.empty(), ErrorCode::empty_input, "no truth voxels in any training case");
  require(!bg.empty(), ErrorCode::empty_input, "subject prevalence masks hold no background voxels");

  std::mt19937_64 rng(config.seed);
  if (config.max_positive_patches > 0 && pos.size() > config.max_positive_patches) {
    std::vector<Site> kept;
    std::sample(pos.begin(), pos.end(), std::back_inserter(kept), config.max_positive_patches, rng);
    pos = std::move(kept);
  }
  const std::size_t n_bg = background_count(pos.size(), config.lacune_background_ratio);
  require(n_bg <= bg.size(), ErrorCode::invalid_argument,
          "need " + std::to_string(n_bg) + " background centres, only " + std::to_string(bg.size()) + " available");
  std::vector<Site> bgs;
  std::sample(bg.begin(), bg.end(), std::back_inserter(bgs), n_bg, rng);

  SegmentationDataset ds;
  std::uniform_int_distribution<long> jit(-static_cast<long>(config.jitter), static_cast<long>(config.jitter));
  const auto emit = [&](const Site& s, bool positive) {
    const MultiModalCase& c = norm[s.case_index];
    const Shape3 sh = c.shape();
    const std::size_t x = s.voxel % sh.nx, y = (s.voxel / sh.nx) % sh.ny, z = s.voxel / (sh.nx * sh.ny);
    double row = static_cast<double>(y), col = static_cast<double>(x);
    if (config.jitter > 0) {
      row += static_cast<double>(jit(rng));
      col += static_cast<double>(jit(rng));
    }
    const PixelOrigin o = centered_origin(row, col, config.patch_size, sh.ny, sh.nx);
    SegmentationSample smp;
    smp.case_id = c.case_id;
    smp.patch = extract_patch(slice_stack(c, z), o, config.patch_size);
    smp.truth = crop_mask(axial_plane(*c.truth, z), o, config.patch_size);
    smp.positive = positive;
    ds.samples.push_back(std::move(smp));
  };
  for (const Site& s : pos) emit(s, true);
  for (const Site& s : bgs) emit(s, false);
  ds.positives = pos.size();
  ds.backgrounds = bgs.size();
  return ds;
}

// ---------------------------------------------------------------- Segmenter

PlaneF Segmenter::predict_patch(const Patch2D& patch) const {
  const std::size_t S = config_.patch_size;
  require(patch.channels.size() == 3, ErrorCode::shape_mismatch,
          "segmenter expects 3 channels, got " + std::to_string(patch.channels.size()));
  for (const auto& ch : patch.channels)
    require(ch.rows == S && ch.cols == S, ErrorCode::shape_mismatch,
            "segmenter expects " + std::to_string(S) + "x" + std::to_string(S) + " planes, got " +
                std::to_string(ch.rows) + "x" + std::to_string(ch.cols));
  PlaneF p = probabilities(patch);
  for (float& v : p.data) v = std::clamp(v, 0.0f, 1.0f);
  return p;
}

void Segmenter::set_threshold(double t) {
  require(t >= 0 && t <= 1, ErrorCode::invalid_argument, "threshold must lie in [0, 1]");
  config_.threshold = t;
}

Checkpoint Segmenter::to_checkpoint() const {
  Checkpoint c;
  c.kind = kind();
  c.metadata["config"] = config_;
  c.metadata["threshold"] = config_.threshold;
  return c;
}

RuleBasedSegmenter::RuleBasedSegmenter(SegmenterConfig config) : Segmenter(std::move(config)) {
  config_.model = "rule-based";
  validate(config_);
}

PlaneF RuleBasedSegmenter::probabilities(const Patch2D& patch) const {
  const PlaneU8 m = fill_holes(hypointense_pixels(patch.channels[0], patch.channels[2], config_.rule));
  PlaneF out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i] ? 1.0f : 0.0f;
  return out;
}

// ------------------------------------------------------------------- U-Net

nn::Tensor UNetSegmenter::Net::forward(const nn::Tensor& x) {
  nn::Tensor s1 = r[1].forward(e1b.forward(r[0].forward(e1a.forward(x))));
  nn::Tensor s2 = r[3].forward(e2b.forward(r[2].forward(e2a.forward(p1.forward(s1)))));
  nn::Tensor b = r[5].forward(bb.forward(r[4].forward(ba.forward(p2.forward(s2)))));
  nn::Tensor u2 = r[7].forward(d2b.forward(r[6].forward(d2a.forward(nn::concat(nn::upsample(b, 2), s2)))));
  nn::Tensor u1 = r[9].forward(d1b.forward(r[8].forward(d1a.forward(nn::concat(nn::upsample(u2, 2), s1)))));
  return head.forward(u1);
}

void UNetSegmenter::Net::backward(const nn::Tensor& g) {
  nn::Tensor gu1 = head.backward(g);
  auto [gup1, gs1] = nn::split(d1a.backward(r[8].backward(d1b.backward(r[9].backward(gu1)))), c2);
  nn::Tensor gu2 = nn::upsample_backward(gup1, 2);
  auto [gup2, gs2] = nn::split(d2a.backward(r[6].backward(d2b.backward(r[7].backward(gu2)))), c3);
  nn::Tensor gb = nn::upsample_backward(gup2, 2);
  nn::add_inplace(gs2, p2.backward(ba.backward(r[4].backward(bb.backward(r[5].backward(gb))))));
  nn::add_inplace(gs1, p1.backward(e2a.backward(r[2].backward(e2b.backward(r[3].backward(gs2))))));
  e1a.backward(r[0].backward(e1b.backward(r[1].backward(gs1))));
}

std::vector<nn::Param*> UNetSegmenter::Net::parameters() {
  std::vector<nn::Param*> out;
  for (nn::Conv2d* c : {&e1a, &e1b, &e2a, &e2b, &ba, &bb, &d2a, &d2b, &d1a, &d1b, &head})
    for (nn::Param* p : c->parameters()) out.push_back(p);
  return out;
}

UNetSegmenter::UNetSegmenter(SegmenterConfig config) : Segmenter(std::move(config)) {
  config_.model = "unet";
  validate(config_);
  std::mt19937_64 rng(config_.seed);
  const std::size_t c1 = config_.base_channels, c2 = 2 * c1, c3 = 4 * c1;
  net_.c1 = c1;
  net_.c2 = c2;
  net_.c3 = c3;
  net_.e1a = nn::Conv2d(3, c1, 3, rng);
  net_.e1b = nn::Conv2d(c1, c1, 3, rng);
  net_.e2a = nn::Conv2d(c1, c2, 3, rng);
  net_.e2b = nn::Conv2d(c2, c2, 3, rng);
  net_.ba = nn::Conv2d(c2, c3, 3, rng);
  net_.bb = nn::Conv2d(c3, c3, 3, rng);
  net_.d2a = nn::Conv2d(c3 + c2, c2, 3, rng);
  net_.d2b = nn::Conv2d(c2, c2, 3, rng);
  net_.d1a = nn::Conv2d(c2 + c1, c1, 3, rng);
  net_.d1b = nn::Conv2d(c1, c1, 3, rng);
  net_.head = nn::Conv2d(c1, 1, 1, rng);
}

namespace {

nn::Tensor to_tensor(const Patch2D& p) {
  const std::size_t S = p.channels[0].rows;
  nn::Tensor t(p.channels.size(), S, S);
  for (std::size_t c = 0; c < p.channels.size(); ++c)
    std::copy(p.channels[c].data.begin(), p.channels[c].data.end(), t.v.begin() + static_cast<long>(c * S * S));
  return t;
}

double hard_dice(const nn::Tensor& logits, const PlaneU8& truth) {
  PlaneU8 pred(truth.rows, truth.cols);
  for (std::size_t i = 0; i < pred.data.size(); ++i) pred.data[i] = logits.v[i] >= 0.0f ? 1 : 0;
  return dice(pred, truth);
}

}  // namespace

double UNetSegmenter::sample_loss(const nn::Tensor& logits, const PlaneU8& truth, nn::Tensor* grad) const {
  std::vector<float> target(truth.data.begin(), truth.data.end());
  nn::Tensor scratch;
  nn::Tensor& g = grad ? *grad : scratch;
  g = nn::Tensor(logits.c, logits.h, logits.w);
  double loss = nn::soft_dice_with_logits(logits.v, target, g.v);
  if (config_.loss == "dice_bce") loss += nn::bce_with_logits(logits.v, target, g.v);
  return loss;
}

PlaneF UNetSegmenter::probabilities(const Patch2D& patch) const {
  Net net = net_;
  const nn::Tensor logits = net.forward(to_tensor(patch));
  PlaneF out(logits.h, logits.w);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = nn::sigmoid(logits.v[i]);
  return out;
}

std::pair<double, double> UNetSegmenter::evaluate(const SegmentationDataset& data) const {
  Net net = net_;
  double loss = 0.0, d = 0.0;
  for (const auto& s : data.samples) {
    const nn::Tensor logits = net.forward(to_tensor(s.patch));
    loss += sample_loss(logits, s.truth, nullptr);
    d += hard_dice(logits, s.truth);
  }
  const double n = static_cast<double>(data.samples.size());
  return {loss / n, d / n};
}

void UNetSegmenter::train(const SegmentationDataset& data, const SegmentationDataset* validation) {
  require(!data.samples.empty(), ErrorCode::empty_input, "empty segmentation dataset");
  const bool has_pos = std::any_of(data.samples.begin(), data.samples.end(), [](const auto& s) { return s.positive; });
  const bool has_bg = std::any_of(data.samples.begin(), data.samples.end(), [](const auto& s) { return !s.positive; });
  require(has_pos && has_bg, ErrorCode::invalid_argument, "segmentation dataset must contain both classes");
  for (const auto& s : data.samples)
    require(s.patch.size == config_.patch_size && s.patch.channels.size() == 3, ErrorCode::shape_mismatch,
            "training patch geometry differs from segmenter config");

  std::mt19937_64 rng(config_.seed ^ 0x5bd1e995ULL);
  nn::Adam adam({static_cast<float>(config_.learning_rate)});
  const auto params = net_.parameters();
  std::vector<std::size_t> order(data.samples.size());
  log_.clear();
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, dsum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config_.batch_size) {
      const std::size_t e = std::min(order.size(), b + config_.batch_size);
      for (std::size_t k = b; k < e; ++k) {
        const auto& s = data.samples[order[k]];
        const nn::Tensor logits = net_.forward(to_tensor(s.patch));
        nn::Tensor grad;
        const double l = sample_loss(logits, s.truth, &grad);
        if (!std::isfinite(l))
          fail(ErrorCode::training_diverged, "non-finite segmenter loss at epoch " + std::to_string(epoch + 1) +
                                                 ", sample from " + s.case_id);
        net_.backward(grad);
        total += l;
        dsum += hard_dice(logits, s.truth);
      }
      adam.step(params, static_cast<float>(e - b));
    }
    SegmenterEpochLog entry{epoch + 1, total / static_cast<double>(order.size()),
                            dsum / static_cast<double>(order.size()), std::nullopt, std::nullopt};
    if (validation && !validation->samples.empty()) {
      const auto [vl, vd] = evaluate(*validation);
      entry.validation_loss = vl;
      entry.validation_dice = vd;
    }
    log_.push_back(entry);
  }

  if (config_.optimize_threshold) {
    const SegmentationDataset& ref = validation && !validation->samples.empty() ? *validation : data;
    std::vector<PlaneF> probs;
    std::vector<PlaneU8> truths;
    for (const auto& s : ref.samples) {
      probs.push_back(probabilities(s.patch));
      truths.push_back(s.truth);
    }
    config_.threshold = optimize_threshold(probs, truths);
  }
}

Checkpoint UNetSegmenter::to_checkpoint() const {
  Checkpoint c = Segmenter::to_checkpoint();
  Net copy = net_;
  c.weights = nn::flatten(copy.parameters());
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : log_) {
    nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_dice", e.train_dice}};
    if (e.validation_loss) row["validation_loss"] = *e.validation_loss;
    if (e.validation_dice) row["validation_dice"] = *e.validation_dice;
    log.push_back(row);
  }
  c.metadata["training_log"] = log;
  c.metadata["epochs_run"] = log_.size();
  return c;
}

void UNetSegmenter::load_weights(const std::vector<float>& weights) { nn::unflatten(net_.parameters(), weights); }

std::unique_ptr<Segmenter> make_segmenter(const SegmenterConfig& config) {
  if (config.model == "rule-based") return std::make_unique<RuleBasedSegmenter>(config);
  return std::make_unique<UNetSegmenter>(config);
}

std::unique_ptr<Segmenter> load_segmenter(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  require(c.metadata.contains("config") && c.metadata.contains("threshold"), ErrorCode::parse,
          "segmenter checkpoint lacks config or threshold");
  SegmenterConfig config = c.metadata.at("config").get<SegmenterConfig>();
  std::unique_ptr<Segmenter> s;
  if (c.kind == "rule-based") {
    s = std::make_unique<RuleBasedSegmenter>(config);
  } else {
    require(c.kind == "unet", ErrorCode::parse, "checkpoint kind '" + c.kind + "' is not a segmenter");
    auto u = std::make_unique<UNetSegmenter>(config);
    u->load_weights(c.weights);
    s = std::move(u);
  }
  s->set_threshold(c.metadata.at("threshold").get<double>());
  return s;
}

// --------------------------------------------------------------- Threshold

std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(k / 20.0);
  return g;
}

double mean_dice_at(const std::vector<PlaneF>& probabilities, const std::vector<PlaneU8>& truths, double t) {
  require(!probabilities.empty() && probabilities.size() == truths.size(), ErrorCode::empty_input,
          "threshold evaluation needs non-empty, paired predictions and truths");
  const float tf = static_cast<float>(t);
  double sum = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const PlaneF& p = probabilities[i];
    require(p.rows == truths[i].rows && p.cols == truths[i].cols, ErrorCode::shape_mismatch,
            "prediction/truth plane mismatch");
    PlaneU8 pred(p.rows, p.cols);
    for (std::size_t k = 0; k < p.data.size(); ++k) pred.data[k] = p.data[k] >= tf ? 1 : 0;
    sum += dice(pred, truths[i]);
  }
  return sum / static_cast<double>(probabilities.size());
}

double optimize_threshold(const std::vector<PlaneF>& probabilities, const std::vector<PlaneU8>& truths) {
  double best_t = 0.0, best = -1.0;
  for (double t : threshold_grid()) {
    const double d = mean_dice_at(probabilities, truths, t);
    if (d > best) best = d, best_t = t;
  }
  return best_t;
}

// ----------------------------------------------------------------- Inference

Mask3D segment_candidates(const MultiModalCase& c, const Mask3D& candidates, const Segmenter& model) {
  require(candidates.same_geometry(c.t1), ErrorCode::shape_mismatch, "candidate map geometry differs from case");
  require_binary(candidates, "candidate map");
  const Shape3 sh = c.shape();
  const std::size_t P = model.config().patch_size;

  using Job = std::tuple<std::size_t, std::size_t, std::size_t>;  // z, row, col
  std::vector<Job> jobs;
  const Labeling3D lab = label_components(candidates, Connectivity3D::full26);
  for (const auto& comp : component_voxels(lab)) {
    std::map<std::size_t, std::array<double, 3>> per_slice;  // z -> (sum row, sum col, n)
    for (std::size_t v : comp) {
      auto& acc = per_slice[v / (sh.nx * sh.ny)];
      acc[0] += static_cast<double>((v / sh.nx) % sh.ny);
      acc[1] += static_cast<double>(v % sh.nx);
      acc[2] += 1.0;
    }
    for (const auto& [z, acc] : per_slice) {
      const PixelOrigin o = centered_origin(acc[0] / acc[2], acc[1] / acc[2], P, sh.ny, sh.nx);
      jobs.emplace_back(z, o.row, o.col);
    }
  }
  std::sort(jobs.begin(), jobs.end());
  jobs.erase(std::unique(jobs.begin(), jobs.end()), jobs.end());

  std::vector<PlaneU8> results(jobs.size());
  const float t = static_cast<float>(model.threshold());
  const long n = static_cast<long>(jobs.size());
  // The first exception inside the parallel region is rethrown after it.
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      const auto [z, row, col] = jobs[static_cast<std::size_t>(i)];
      const PlaneF prob = model.predict_patch(extract_patch(slice_stack(c, z), {row, col}, P));
      PlaneU8 m(P, P);
      for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = prob.data[k] >= t ? 1 : 0;
      results[static_cast<std::size_t>(i)] = std::move(m);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  Mask3D out = candidates.like<std::uint8_t>(0);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto [z, row, col] = jobs[i];
    for (std::size_t r = 0; r < P; ++r)
      for (std::size_t cc = 0; cc < P; ++cc)
        if (results[i](r, cc)) out(col + cc, row + r, z) = 1;
  }
  return out;
}

}  // namespace lacune
