#include "lacune/prevalence.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include <sys/wait.h>

#include "lacune/components.hpp"
#include "lacune/kernels.hpp"
#include "lacune/nifti.hpp"

namespace lacune {

PrevalenceMap build_frequency(const std::vector<Mask3D>& masks) {
  require(!masks.empty(), ErrorCode::empty_input, "prevalence map needs at least one mask");
  const Mask3D& ref = masks.front();
  std::vector<std::uint32_t> counts(ref.size(), 0);
  for (const auto& m : masks) {
    require(m.same_geometry(ref), ErrorCode::shape_mismatch, "lesion masks differ in shape/spacing");
    require_binary(m, "lesion mask");
    for (std::size_t i = 0; i < m.size(); ++i) counts[i] += m[i];
  }
  PrevalenceMap out;
  out.frequency = ref.like<float>();
  out.mask = ref.like<std::uint8_t>();
  const double n = static_cast<double>(masks.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.frequency[i] = static_cast<float>(counts[i] / n);
    out.mask[i] = counts[i] > 0 ? 1 : 0;
  }
  out.provenance.subject_count = masks.size();
  return out;
}

PrevalenceMap symmetrize(const PrevalenceMap& m, int axis) {
  PrevalenceMap out = m;
  const Volume3D fm = mirror(m.frequency, axis);
  const Mask3D mm = mirror(m.mask, axis);
  for (std::size_t i = 0; i < m.mask.size(); ++i) {
    out.frequency[i] = std::max(m.frequency[i], fm[i]);
    out.mask[i] = std::max(m.mask[i], mm[i]);
  }
  out.provenance.symmetrized = true;
  return out;
}

Mask3D dilate_mm(const Mask3D& binary, double radius_mm) {
  require(radius_mm > 0 && std::isfinite(radius_mm), ErrorCode::invalid_argument, "dilation radius must be positive");
  require_binary(binary, "dilation input");
  return kernels::parallel::dilate_mm(binary, radius_mm);
}

PrevalenceMap dilate(const PrevalenceMap& m, double radius_mm) {
  PrevalenceMap out = m;
  out.mask = dilate_mm(m.mask, radius_mm);
  out.provenance.dilation_mm = radius_mm;
  return out;
}

PrevalenceMap remove_csf(const PrevalenceMap& m, const Mask3D& csf_mask) {
  require(csf_mask.shape() == m.mask.shape(), ErrorCode::shape_mismatch, "CSF mask shape differs from map");
  require_binary(csf_mask, "CSF mask");
  PrevalenceMap out = m;
  for (std::size_t i = 0; i < out.mask.size(); ++i)
    if (csf_mask[i]) out.mask[i] = 0;
  out.provenance.csf_excluded = true;
  return out;
}

PrevalenceMap build_prevalence_map(const std::vector<Mask3D>& masks, const Mask3D* csf,
                                   const PrevalenceBuildOptions& options) {
  PrevalenceMap m = build_frequency(masks);
  if (options.symmetrize) m = symmetrize(m, options.mirror_axis);
  if (options.dilation_mm > 0) m = dilate(m, options.dilation_mm);
  if (csf) m = remove_csf(m, *csf);
  return m;
}

Mask3D resample_nearest(const Mask3D& m, const Shape3& shape, const Spacing3& spacing) {
  if (m.same_geometry(shape, spacing)) return m;
  Mask3D out(shape, spacing, 0);
  const Shape3 src = m.shape();
  const Spacing3 ss = m.spacing();
  const auto pick = [](std::size_t i, double dst_sp, double src_sp, std::size_t n) -> long {
    const long j = std::lround(static_cast<double>(i) * dst_sp / src_sp);
    return j >= 0 && j < static_cast<long>(n) ? j : -1;
  };
  for (std::size_t z = 0; z < shape.nz; ++z) {
    const long Z = pick(z, spacing.z, ss.z, src.nz);
    if (Z < 0) continue;
    for (std::size_t y = 0; y < shape.ny; ++y) {
      const long Y = pick(y, spacing.y, ss.y, src.ny);
      if (Y < 0) continue;
      for (std::size_t x = 0; x < shape.nx; ++x) {
        const long X = pick(x, spacing.x, ss.x, src.nx);
        if (X >= 0) out(x, y, z) = m(X, Y, Z);
      }
    }
  }
  return out;
}

std::string expand_command(const std::string& tmpl, const std::filesystem::path& fixed,
                           const std::filesystem::path& moving, const std::filesystem::path& out) {
  std::string cmd = tmpl;
  const std::array<std::pair<std::string, std::string>, 3> subs = {
      {{"{fixed}", fixed.string()}, {"{moving}", moving.string()}, {"{out}", out.string()}}};
  for (const auto& [key, value] : subs)
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
      cmd.replace(pos, key.size(), value);
  return cmd;
}

namespace {

Mask3D validated(Mask3D m, const Shape3& shape, const Spacing3& spacing, const std::string& what) {
  require(m.same_geometry(shape, spacing), ErrorCode::shape_mismatch, what + " does not match subject geometry");
  return m;
}

struct CommandResult {
  int status = -1;
  std::string output;
};

CommandResult run_capture(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  require(pipe != nullptr, ErrorCode::registration_failed, "cannot launch: " + cmd);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

Mask3D resample_to_subject(const PrevalenceMap& m, const TransformSpec& spec) {
  return std::visit(
      [&](const auto& t) -> Mask3D {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, transform::Identity>) {
          return resample_nearest(m.mask, t.shape, t.spacing);
        } else if constexpr (std::is_same_v<T, transform::Precomputed>) {
          require(std::filesystem::exists(t.path), ErrorCode::missing_file,
                  "precomputed subject-space map not found: " + t.path.string());
          return validated(nifti::read_mask(t.path), t.shape, t.spacing, t.path.string());
        } else {
          require(std::filesystem::exists(t.fixed), ErrorCode::missing_file,
                  "registration fixed image not found: " + t.fixed.string());
          if (!std::filesystem::exists(t.moving)) nifti::write_mask(t.moving, m.mask);
          const std::string cmd = expand_command(t.command_template, t.fixed, t.moving, t.out);
          const CommandResult r = run_capture(cmd);
          require(r.status == 0, ErrorCode::registration_failed,
                  "registration command exited with status " + std::to_string(r.status) + ": " + cmd +
                      "\n--- output ---\n" + r.output);
          require(std::filesystem::exists(t.out), ErrorCode::registration_failed,
                  "registration produced no output at " + t.out.string() + "\n--- output ---\n" + r.output);
          return validated(nifti::read_mask(t.out), t.shape, t.spacing, t.out.string());
        }
      },
      spec);
}

Mask3D apply_mask(const Mask3D& pred, const Mask3D& subject_mask) {
  require(pred.shape() == subject_mask.shape(), ErrorCode::shape_mismatch,
          "prediction and prevalence mask differ in shape");
  const Labeling3D lab = label_components(pred, Connectivity3D::full26);
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(lab.count) + 1, 0);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (lab.labels[i] > 0 && subject_mask[i]) keep[static_cast<std::size_t>(lab.labels[i])] = 1;
  Mask3D out = pred.like<std::uint8_t>();
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = keep[static_cast<std::size_t>(lab.labels[i])];
  return out;
}

}  // namespace lacune
