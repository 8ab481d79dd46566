#include "lacune/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <omp.h>

#include "lacune/json_util.hpp"
#include "lacune/metrics.hpp"
#include "lacune/nifti.hpp"
#include "lacune/overlay.hpp"
#include "lacune/pipeline.hpp"
#include "lacune/provenance.hpp"

namespace fs = std::filesystem;

namespace lacune::cli {

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  phantom.seed = s;
  detector.seed = s;
  segmenter.seed = s;
}

namespace {

void prevalence_from_json(const json& j, PrevalenceBuildOptions& o) {
  reject_unknown_keys(j, {"dilation_mm", "mirror_axis", "symmetrize"}, "prevalence config");
  read_optional(j, "dilation_mm", o.dilation_mm);
  read_optional(j, "mirror_axis", o.mirror_axis);
  read_optional(j, "symmetrize", o.symmetrize);
  require(o.dilation_mm >= 0, ErrorCode::config, "dilation_mm must be >= 0");
  require(o.mirror_axis >= 0 && o.mirror_axis <= 2, ErrorCode::config, "mirror_axis must be 0, 1 or 2");
}

json prevalence_to_json(const PrevalenceBuildOptions& o) {
  return {{"dilation_mm", o.dilation_mm}, {"mirror_axis", o.mirror_axis}, {"symmetrize", o.symmetrize}};
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::missing_file, "cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, "invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig c;
  if (!path) return c;
  const json j = read_json_file(*path);
  reject_unknown_keys(j, {"phantom", "prevalence", "detector", "segmenter", "seed"}, "run config");
  if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomSpec>();
  if (j.contains("prevalence")) prevalence_from_json(j.at("prevalence"), c.prevalence);
  if (j.contains("detector")) c.detector = j.at("detector").get<DetectorConfig>();
  if (j.contains("segmenter")) c.segmenter = j.at("segmenter").get<SegmenterConfig>();
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read_optional(j, "seed", s);
    c.apply_seed(s);
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j = {{"phantom", c.phantom},
            {"prevalence", prevalence_to_json(c.prevalence)},
            {"detector", c.detector},
            {"segmenter", c.segmenter}};
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

std::vector<fs::path> case_directories(const fs::path& root) {
  require(fs::is_directory(root), ErrorCode::missing_file, "case directory not found: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && nifti::find_image(e.path(), "t1")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorCode::empty_input, "no case directories with t1 images under " + root.string());
  return out;
}

namespace {

struct Common {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  int jobs = 0;

  RunConfig load() const {
    RunConfig c = load_run_config(config);
    if (seed) c.apply_seed(*seed);
    return c;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--seed", c.seed, "Global seed (overrides config seeds)");
  app->add_option("--jobs", c.jobs, "Worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
}

void set_jobs(int jobs) {
  if (jobs > 0) omp_set_num_threads(jobs);
}

json file_entry(const fs::path& p) { return {{"path", p.string()}, {"sha256", sha256_file(p)}}; }

json base_record(const std::string& command, const RunConfig& c) {
  return {{"command", command}, {"config", to_json(c)}, {"seed", c.seed ? json(*c.seed) : json(nullptr)}};
}

Mask3D subject_mask_for(const PrevalenceMap& map, const MultiModalCase& c, const fs::path& case_dir,
                        const std::optional<std::string>& register_cmd, const fs::path& prevmask_path) {
  if (!register_cmd) return resample_to_subject(map, transform::Identity{c.shape(), c.spacing()});
  const auto fixed = nifti::find_image(case_dir, "flair");
  require(fixed.has_value(), ErrorCode::missing_file, "no FLAIR image in " + case_dir.string());
  const fs::path out = fs::temp_directory_path() / ("lacune_subject_" + c.case_id + ".nii.gz");
  return resample_to_subject(
      map, transform::ExternalCommand{*register_cmd, *fixed, prevmask_path, out, c.shape(), c.spacing()});
}

PrevalenceMap load_prevmask(const fs::path& p) {
  PrevalenceMap m;
  m.mask = nifti::read_mask(p);
  require_binary(m.mask, "prevalence mask " + p.string());
  return m;
}

// ---------------------------------------------------------------- commands

int run_gen_phantoms(const Common& common, std::size_t n, const fs::path& out, const std::optional<fs::path>& spec) {
  RunConfig c = common.load();
  if (spec) c.phantom = read_json_file(*spec).get<PhantomSpec>();
  if (common.seed) c.phantom.seed = *common.seed;
  set_jobs(common.jobs);
  fs::create_directories(out);
  const std::uint64_t base = c.phantom.seed;
  const long count = static_cast<long>(n);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    try {
      PhantomSpec s = c.phantom;
      s.seed = base + static_cast<std::uint64_t>(i);
      char name[32];
      std::snprintf(name, sizeof name, "case_%03ld", i);
      Phantom p = generate_phantom(s);
      p.image.case_id = name;
      const fs::path dir = out / name;
      write_phantom(dir, p, s);
      json rec = base_record("gen-phantoms", c);
      rec["phantom_seed"] = s.seed;
      rec["outputs"] = json::array();
      for (const char* f : {"t1", "t2", "flair", "truth", "region", "decoys", "csf"})
        rec["outputs"].push_back(file_entry(dir / (std::string(f) + ".nii.gz")));
      write_provenance(dir, rec);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  std::cout << "wrote " << n << " phantoms to " << out.string() << '\n';
  return kExitOk;
}

int run_build_prevmap(const Common& common, const fs::path& cases, const fs::path& out,
                      const std::optional<fs::path>& csf_path, const std::optional<fs::path>& frequency_out,
                      std::optional<double> dilation, bool no_symmetrize) {
  RunConfig c = common.load();
  if (dilation) c.prevalence.dilation_mm = *dilation;
  if (no_symmetrize) c.prevalence.symmetrize = false;
  set_jobs(common.jobs);
  std::vector<Mask3D> masks;
  std::optional<Mask3D> csf;
  bool all_csf = true;
  json inputs = json::array();
  for (const auto& dir : case_directories(cases)) {
    const auto truth = nifti::find_image(dir, "truth");
    require(truth.has_value(), ErrorCode::missing_file, "no truth mask in " + dir.string());
    masks.push_back(nifti::read_mask(*truth));
    inputs.push_back(file_entry(*truth));
    const auto cp = nifti::find_image(dir, "csf");
    if (!cp) {
      all_csf = false;
    } else if (!csf_path) {
      // Atlas CSF: voxels that are CSF in every training subject.
      Mask3D m = nifti::read_mask(*cp);
      if (!csf) csf = std::move(m);
      else {
        require(m.same_geometry(*csf), ErrorCode::shape_mismatch, "CSF masks differ in geometry");
        for (std::size_t i = 0; i < m.size(); ++i) (*csf)[i] = (*csf)[i] & m[i];
      }
    }
  }
  if (csf_path) csf = nifti::read_mask(*csf_path);
  else if (!all_csf) csf.reset();
  const PrevalenceMap map = build_prevalence_map(masks, csf ? &*csf : nullptr, c.prevalence);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  nifti::write_mask(out, map.mask);
  json rec = base_record("build-prevmap", c);
  rec["inputs"] = inputs;
  rec["subjects"] = map.provenance.subject_count;
  rec["csf_excluded"] = map.provenance.csf_excluded;
  rec["outputs"] = json::array({file_entry(out)});
  if (frequency_out) {
    nifti::write_volume(*frequency_out, map.frequency);
    rec["outputs"].push_back(file_entry(*frequency_out));
  }
  write_provenance(out, rec);
  std::cout << "prevalence mask: " << count_nonzero(map.mask) << " voxels -> " << out.string() << '\n';
  return kExitOk;
}

std::vector<MultiModalCase> load_cases(const fs::path& root, std::vector<fs::path>* dirs = nullptr) {
  std::vector<MultiModalCase> out;
  for (const auto& d : case_directories(root)) {
    out.push_back(load_case_dir(d));
    if (dirs) dirs->push_back(d);
  }
  return out;
}

void save_with_provenance(const fs::path& out, const Checkpoint& ck, json rec) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  rec["outputs"] = json::array({file_entry(out), file_entry(sidecar_path(out))});
  write_provenance(out, rec);
}

int run_train_detect(const Common& common, const fs::path& cases, const fs::path& out,
                     const std::optional<std::string>& model, std::optional<std::size_t> epochs) {
  RunConfig c = common.load();
  if (model) c.detector.model = *model;
  if (epochs) c.detector.epochs = *epochs;
  validate(c.detector);
  set_jobs(common.jobs);
  json rec = base_record("train-detect", c);
  if (c.detector.model == "rule-based") {
    save_with_provenance(out, RuleBasedDetector(c.detector).to_checkpoint(), rec);
    std::cout << "rule-based detector checkpoint -> " << out.string() << '\n';
    return kExitOk;
  }
  const auto data = build_training_set(load_cases(cases), c.detector);
  LearnedDetector det(c.detector);
  det.train(data);
  for (const auto& e : det.training_log())
    std::cout << "epoch " << e.epoch << " loss " << e.loss << " median batch loss " << e.median_batch_loss << '\n';
  rec["training_patches"] = data.samples.size();
  save_with_provenance(out, det.to_checkpoint(), rec);
  return kExitOk;
}

int run_train_segment(const Common& common, const fs::path& cases, const fs::path& prevmask, const fs::path& out,
                      const std::optional<fs::path>& split, const std::optional<std::string>& model,
                      std::optional<std::size_t> epochs, const std::optional<std::string>& register_cmd) {
  RunConfig c = common.load();
  if (model) c.segmenter.model = *model;
  if (epochs) c.segmenter.epochs = *epochs;
  validate(c.segmenter);
  set_jobs(common.jobs);
  json rec = base_record("train-segment", c);
  rec["prevmask"] = file_entry(prevmask);
  if (c.segmenter.model == "rule-based") {
    save_with_provenance(out, RuleBasedSegmenter(c.segmenter).to_checkpoint(), rec);
    std::cout << "rule-based segmenter checkpoint -> " << out.string() << '\n';
    return kExitOk;
  }
  std::vector<fs::path> dirs;
  const auto all = load_cases(cases, &dirs);
  const PrevalenceMap map = load_prevmask(prevmask);
  std::vector<std::string> val_ids;
  if (split) {
    const json j = read_json_file(*split);
    reject_unknown_keys(j, {"validation"}, "split file");
    read_optional(j, "validation", val_ids);
  }
  std::vector<MultiModalCase> train_cases, val_cases;
  std::vector<Mask3D> train_masks, val_masks;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const bool val = std::find(val_ids.begin(), val_ids.end(), all[i].case_id) != val_ids.end();
    (val ? val_cases : train_cases).push_back(all[i]);
    (val ? val_masks : train_masks).push_back(subject_mask_for(map, all[i], dirs[i], register_cmd, prevmask));
  }
  require(!train_cases.empty(), ErrorCode::empty_input, "split leaves no training cases");
  const auto data = sample_training_patches(train_cases, train_masks, c.segmenter);
  std::optional<SegmentationDataset> val;
  if (!val_cases.empty()) val = sample_training_patches(val_cases, val_masks, c.segmenter);
  UNetSegmenter seg(c.segmenter);
  seg.train(data, val ? &*val : nullptr);
  for (const auto& e : seg.training_log()) {
    std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " dice " << e.train_dice;
    if (e.validation_dice) std::cout << " val_loss " << *e.validation_loss << " val_dice " << *e.validation_dice;
    std::cout << '\n';
  }
  std::cout << "threshold " << seg.threshold() << '\n';
  rec["training_patches"] = {{"positive", data.positives}, {"background", data.backgrounds}};
  rec["validation_cases"] = val_ids;
  save_with_provenance(out, seg.to_checkpoint(), rec);
  return kExitOk;
}

int run_predict(const Common& common, const std::vector<fs::path>& case_dirs, const fs::path& det_path,
                const fs::path& seg_path, const fs::path& prevmask, const fs::path& out,
                const std::optional<fs::path>& overlay, const std::optional<std::string>& register_cmd) {
  const RunConfig c = common.load();
  const auto detector = load_detector(det_path);
  const auto segmenter = load_segmenter(seg_path);
  const PrevalenceMap map = load_prevmask(prevmask);
  fs::create_directories(out);
  PipelineOptions opts;
  opts.identifiers = {{"detector", file_entry(det_path)},
                      {"segmenter", file_entry(seg_path)},
                      {"prevalence_mask", file_entry(prevmask)}};
  // Per-case parallelism; kernels inside a case then run on one thread.
  const long n = static_cast<long>(case_dirs.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(common.jobs > 0 ? common.jobs : 1)
  for (long i = 0; i < n; ++i) {
    try {
      const fs::path& dir = case_dirs[static_cast<std::size_t>(i)];
      MultiModalCase mc;
      Mask3D subject;
      try {
        mc = load_case_dir(dir);
        subject = subject_mask_for(map, mc, dir, register_cmd, prevmask);
      } catch (const Error& e) {
        throw e.with_stage("load");
      }
      const SegmentationResult r = predict_case(mc, *detector, *segmenter, subject, opts);
      const fs::path seg = out / (mc.case_id + "_seg.nii.gz");
      const fs::path unc = out / (mc.case_id + "_unc.nii.gz");
      nifti::write_mask(seg, r.segmentation);
      nifti::write_mask(unc, r.uncertainty);
      json rec = base_record("predict", c);
      rec["case"] = dir.string();
      rec["pipeline"] = r.provenance;
      rec["outputs"] = json::array({file_entry(seg), file_entry(unc)});
      if (overlay) {
        const auto pngs = write_overlays(*overlay, mc.case_id, mc.flair, &subject, mc.truth ? &*mc.truth : nullptr,
                                         r.segmentation);
        for (const auto& p : pngs) rec["outputs"].push_back(file_entry(p));
      }
      std::ofstream(out / (mc.case_id + "_provenance.json")) << rec.dump(2) << '\n';
#pragma omp critical
      std::cout << mc.case_id << ": " << count_nonzero(r.segmentation) << " lacune voxels\n";
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return kExitOk;
}

std::optional<fs::path> resolve_truth(const fs::path& dir, const std::string& id) {
  for (const std::string& stem : {id + "_seg", id + "_truth", id})
    if (auto p = nifti::find_image(dir, stem)) return p;
  return nifti::find_image(dir / id, "truth");
}

std::string fmt(const std::optional<double>& v) { return v ? std::to_string(*v) : "undefined"; }

json optional_map(const std::map<SizeClass, std::optional<double>>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::string(to_string(k))] = v ? json(*v) : json(nullptr);
  return j;
}

int run_evaluate(const Common& common, const fs::path& pred_dir, const fs::path& truth_dir, fs::path out,
                 double area_scale) {
  const RunConfig c = common.load();
  require(fs::is_directory(pred_dir), ErrorCode::missing_file, "prediction directory not found: " + pred_dir.string());
  std::vector<std::pair<std::string, fs::path>> preds;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    const std::string name = e.path().filename().string();
    for (const std::string_view suffix : {"_seg.nii.gz", "_seg.nii"})
      if (name.size() > suffix.size() && name.ends_with(suffix))
        preds.emplace_back(name.substr(0, name.size() - suffix.size()), e.path());
  }
  std::sort(preds.begin(), preds.end());
  require(!preds.empty(), ErrorCode::empty_input, "no *_seg.nii[.gz] predictions in " + pred_dir.string());

  std::vector<CaseMetrics> cases(preds.size());
  std::vector<std::vector<ImageInstances>> images(preds.size());
  json inputs = json::array();
  for (const auto& [id, p] : preds) {
    const auto t = resolve_truth(truth_dir, id);
    require(t.has_value(), ErrorCode::missing_file, "no truth for case " + id + " in " + truth_dir.string());
    inputs.push_back({{"case_id", id}, {"prediction", file_entry(p)}, {"truth", file_entry(*t)}});
  }
  const long n = static_cast<long>(preds.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(common.jobs > 0 ? common.jobs : 1)
  for (long i = 0; i < n; ++i) {
    try {
      const auto& [id, p] = preds[static_cast<std::size_t>(i)];
      const Mask3D pred = nifti::read_mask(p);
      const Mask3D truth = nifti::read_mask(*resolve_truth(truth_dir, id));
      require_binary(pred, "prediction " + id);
      require_binary(truth, "truth " + id);
      cases[static_cast<std::size_t>(i)] = evaluate_case(id, pred, truth, area_scale);
      images[static_cast<std::size_t>(i)] = slice_instances(pred, truth, area_scale);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  const MetricsReport rep = aggregate(cases, images);

  json jc = json::array();
  for (const auto& m : rep.cases)
    jc.push_back({{"case_id", m.case_id},
                  {"dice", m.dice},
                  {"iou", m.iou},
                  {"empty_pair", m.empty_pair},
                  {"ap50_by_size", optional_map(m.ap50_by_size)},
                  {"ap_by_size", optional_map(m.ap_by_size)},
                  {"ar_by_size", optional_map(m.ar_by_size)},
                  {"lesionwise", {{"tp", m.lesions.tp}, {"fp", m.lesions.fp}, {"fn", m.lesions.fn}}}});
  const json report = {{"dice", rep.mean_dice},
                       {"iou", rep.mean_iou},
                       {"ap50_by_size", optional_map(rep.ap50_by_size)},
                       {"ap_by_size", optional_map(rep.ap_by_size)},
                       {"ar_by_size", optional_map(rep.ar_by_size)},
                       {"lesionwise", {{"tp", rep.lesions.tp}, {"fp", rep.lesions.fp}, {"fn", rep.lesions.fn}}},
                       {"area_scale", area_scale},
                       {"cases", jc}};
  if (out.extension() != ".json") out += ".json";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << report.dump(2) << '\n';
  fs::path csv = out;
  csv.replace_extension(".csv");
  {
    std::ofstream f(csv);
    f << "case_id,metric,value\n";
    for (const auto& m : rep.cases) {
      f << m.case_id << ",dice," << m.dice << '\n' << m.case_id << ",iou," << m.iou << '\n';
      for (const auto& [k, v] : m.ap50_by_size) f << m.case_id << ",ap50_" << to_string(k) << ',' << fmt(v) << '\n';
      for (const auto& [k, v] : m.ap_by_size) f << m.case_id << ",ap_" << to_string(k) << ',' << fmt(v) << '\n';
      for (const auto& [k, v] : m.ar_by_size) f << m.case_id << ",ar_" << to_string(k) << ',' << fmt(v) << '\n';
      f << m.case_id << ",tp," << m.lesions.tp << '\n'
        << m.case_id << ",fp," << m.lesions.fp << '\n'
        << m.case_id << ",fn," << m.lesions.fn << '\n';
    }
  }
  json rec = base_record("evaluate", c);
  rec["inputs"] = inputs;
  rec["outputs"] = json::array({file_entry(out), file_entry(csv)});
  write_provenance(out, rec);
  std::cout << "mean dice " << rep.mean_dice << " over " << rep.cases.size() << " cases -> " << out.string() << '\n';
  return kExitOk;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Two-stage lacune detection and segmentation", "lacune"};
  app.require_subcommand(1);
  std::function<int()> action;

  Common g_common;
  std::size_t g_n = 0;
  fs::path g_out;
  std::optional<fs::path> g_spec;
  auto* gen = app.add_subcommand("gen-phantoms", "Generate synthetic cases with ground truth");
  add_common(gen, g_common);
  gen->add_option("--n", g_n, "Number of phantoms")->required();
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--spec", g_spec, "Phantom spec JSON (overrides the config's phantom section)");
  gen->callback([&] { action = [&] { return run_gen_phantoms(g_common, g_n, g_out, g_spec); }; });

  Common b_common;
  fs::path b_cases, b_out;
  std::optional<fs::path> b_csf, b_freq;
  std::optional<double> b_dilation;
  bool b_nosym = false;
  auto* bp = app.add_subcommand("build-prevmap", "Build the lesion prevalence mask from training truths");
  add_common(bp, b_common);
  bp->add_option("--cases", b_cases, "Directory of case directories")->required();
  bp->add_option("--out", b_out, "Output mask (.nii.gz)")->required();
  bp->add_option("--csf", b_csf, "Atlas CSF mask to exclude");
  bp->add_option("--frequency-out", b_freq, "Also write the frequency volume");
  bp->add_option("--dilation-mm", b_dilation, "Dilation radius in mm");
  bp->add_flag("--no-symmetrize", b_nosym, "Skip left-right symmetrization");
  bp->callback([&] {
    action = [&] { return run_build_prevmap(b_common, b_cases, b_out, b_csf, b_freq, b_dilation, b_nosym); };
  });

  Common d_common;
  fs::path d_cases, d_out;
  std::optional<std::string> d_model;
  std::optional<std::size_t> d_epochs;
  auto* td = app.add_subcommand("train-detect", "Train the stage-1 detector");
  add_common(td, d_common);
  td->add_option("--cases", d_cases, "Directory of case directories")->required();
  td->add_option("--out", d_out, "Checkpoint path")->required();
  td->add_option("--model", d_model, "learned | rule-based")->check(CLI::IsMember({"learned", "rule-based"}));
  td->add_option("--epochs", d_epochs, "Training epochs");
  td->callback([&] { action = [&] { return run_train_detect(d_common, d_cases, d_out, d_model, d_epochs); }; });

  Common s_common;
  fs::path s_cases, s_prev, s_out;
  std::optional<fs::path> s_split;
  std::optional<std::string> s_model, s_reg;
  std::optional<std::size_t> s_epochs;
  auto* ts = app.add_subcommand("train-segment", "Train the stage-2 segmenter");
  add_common(ts, s_common);
  ts->add_option("--cases", s_cases, "Directory of case directories")->required();
  ts->add_option("--prevmask", s_prev, "Prevalence mask (.nii.gz)")->required();
  ts->add_option("--out", s_out, "Checkpoint path")->required();
  ts->add_option("--split", s_split, "JSON {\"validation\": [case ids]} for threshold optimization");
  ts->add_option("--model", s_model, "unet | rule-based")->check(CLI::IsMember({"unet", "rule-based"}));
  ts->add_option("--epochs", s_epochs, "Training epochs");
  ts->add_option("--register-cmd", s_reg, "Registration command template ({fixed} {moving} {out})");
  ts->callback([&] {
    action = [&] { return run_train_segment(s_common, s_cases, s_prev, s_out, s_split, s_model, s_epochs, s_reg); };
  });

  Common p_common;
  std::vector<fs::path> p_case;
  std::optional<fs::path> p_cases, p_overlay;
  fs::path p_det, p_seg, p_prev, p_out;
  std::optional<std::string> p_reg;
  auto* pr = app.add_subcommand("predict", "Run the full prediction pipeline");
  add_common(pr, p_common);
  auto* one = pr->add_option("--case", p_case, "Case directory (repeatable)");
  auto* many = pr->add_option("--cases", p_cases, "Directory of case directories");
  one->excludes(many);
  pr->add_option("--detector", p_det, "Detector checkpoint")->required();
  pr->add_option("--segmenter", p_seg, "Segmenter checkpoint")->required();
  pr->add_option("--prevmask", p_prev, "Prevalence mask (.nii.gz)")->required();
  pr->add_option("--out", p_out, "Output directory")->required();
  pr->add_option("--overlay", p_overlay, "Write PNG overlays to this directory");
  pr->add_option("--register-cmd", p_reg, "Registration command template ({fixed} {moving} {out})");
  pr->callback([&] {
    action = [&] {
      std::vector<fs::path> dirs = p_case;
      if (p_cases) dirs = case_directories(*p_cases);
      require(!dirs.empty(), ErrorCode::invalid_argument, "give --case or --cases");
      return run_predict(p_common, dirs, p_det, p_seg, p_prev, p_out, p_overlay, p_reg);
    };
  });

  Common e_common;
  fs::path e_pred, e_truth, e_out;
  double e_scale = 16.0;
  auto* ev = app.add_subcommand("evaluate", "Score predictions against truth");
  add_common(ev, e_common);
  ev->add_option("--pred", e_pred, "Directory of <id>_seg.nii.gz predictions")->required();
  ev->add_option("--truth", e_truth, "Truth directory")->required();
  ev->add_option("--out", e_out, "Report path (.json; a .csv is written alongside)")->required();
  ev->add_option("--area-scale", e_scale, "In-plane area scale for size classes (upsample factor squared)");
  ev->callback([&] { action = [&] { return run_evaluate(e_common, e_pred, e_truth, e_out, e_scale); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return action();
  } catch (const Error& e) {
    // Stage-tagged messages already start with "[stage] ".
    const Error tagged = e.stage().empty() ? e.with_stage(name) : e;
    std::cerr << "error (" << to_string(tagged.code()) << "): " << tagged.message() << '\n';
    return kExitWorkflow;
  } catch (const std::exception& e) {
    std::cerr << "error [" << name << "]: " << e.what() << '\n';
    return kExitWorkflow;
  }
}

}  // namespace lacune::cli
