#include "lacune/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "lacune/json_util.hpp"
#include "lacune/nifti.hpp"

namespace lacune {

void validate(const PhantomSpec& s) {
  require(s.shape.nx >= 8 && s.shape.ny >= 8 && s.shape.nz >= 4, ErrorCode::config, "phantom shape too small");
  require(s.spacing.x > 0 && s.spacing.y > 0 && s.spacing.z > 0, ErrorCode::config, "phantom spacing must be > 0");
  const auto [lo, hi] = s.diameter_range_mm;
  require(lo > 0 && lo <= hi, ErrorCode::config, "diameter range must satisfy 0 < min <= max");
  require(s.allow_any_diameter || (lo >= 3.0 && hi <= 15.0), ErrorCode::config,
          "diameter range must lie within [3, 15] mm unless allow_any_diameter is set");
  require(s.noise_level >= 0, ErrorCode::config, "noise level must be >= 0");
  for (int a = 0; a < 3; ++a) {
    require(s.region_fraction[a] > 0 && s.region_fraction[a] < s.brain_fraction[a] && s.brain_fraction[a] <= 0.5,
            ErrorCode::config, "need 0 < region_fraction < brain_fraction <= 0.5");
  }
}

double equivalent_diameter(std::size_t voxels, const Spacing3& sp) {
  const double v = static_cast<double>(voxels) * sp.x * sp.y * sp.z;
  return 2.0 * std::cbrt(3.0 * v / (4.0 * std::numbers::pi));
}

namespace {

struct Ellipsoid {
  std::array<double, 3> center_mm;
  std::array<double, 3> semi_mm;

  double radius2(const std::array<double, 3>& p) const {
    double q = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (p[a] - center_mm[a]) / semi_mm[a];
      q += d * d;
    }
    return q;
  }
};

std::array<double, 3> position_mm(std::size_t x, std::size_t y, std::size_t z, const Spacing3& sp) {
  return {static_cast<double>(x) * sp.x, static_cast<double>(y) * sp.y, static_cast<double>(z) * sp.z};
}

struct Footprint {
  std::array<long, 3> lo, hi;  // inclusive voxel bounds
};

Footprint footprint(const Ellipsoid& e, double pad_mm, const Spacing3& sp, const Shape3& shape) {
  Footprint f{};
  for (int a = 0; a < 3; ++a) {
    const double r = e.semi_mm[a] + pad_mm;
    f.lo[a] = std::max(0L, static_cast<long>(std::floor((e.center_mm[a] - r) / sp[a])));
    f.hi[a] = std::min(static_cast<long>(shape[a]) - 1, static_cast<long>(std::ceil((e.center_mm[a] + r) / sp[a])));
  }
  return f;
}

template <class F>
void for_each_voxel(const Footprint& f, F&& fn) {
  for (long z = f.lo[2]; z <= f.hi[2]; ++z)
    for (long y = f.lo[1]; y <= f.hi[1]; ++y)
      for (long x = f.lo[0]; x <= f.hi[0]; ++x) fn(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                                  static_cast<std::size_t>(z));
}

Ellipsoid grown(const Ellipsoid& e, const std::array<double, 3>& pad) {
  Ellipsoid g = e;
  for (int a = 0; a < 3; ++a) g.semi_mm[a] += pad[a];
  return g;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  const Shape3 shape = spec.shape;
  const Spacing3 sp = spec.spacing;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::array<double, 3> center{}, extent{};
  for (int a = 0; a < 3; ++a) {
    extent[a] = static_cast<double>(shape[a]) * sp[a];
    center[a] = std::floor(static_cast<double>(shape[a]) / 2.0) * sp[a];
  }
  Ellipsoid brain{center, {}}, region{center, {}};
  for (int a = 0; a < 3; ++a) {
    brain.semi_mm[a] = spec.brain_fraction[a] * extent[a];
    region.semi_mm[a] = spec.region_fraction[a] * extent[a];
  }

  Phantom ph;
  ph.image.case_id = "phantom";
  ph.region = Mask3D(shape, sp, 0);
  ph.csf = Mask3D(shape, sp, 0);
  ph.decoys = Mask3D(shape, sp, 0);
  Mask3D truth(shape, sp, 0);
  Mask3D rim(shape, sp, 0);
  Mask3D occupied(shape, sp, 0);  // lesion + rim + separation margin

  for (std::size_t z = 0; z < shape.nz; ++z)
    for (std::size_t y = 0; y < shape.ny; ++y)
      for (std::size_t x = 0; x < shape.nx; ++x) {
        const auto p = position_mm(x, y, z, sp);
        const bool in_brain = brain.radius2(p) <= 1.0;
        ph.csf(x, y, z) = in_brain ? 0 : 1;
        ph.region(x, y, z) = in_brain && region.radius2(p) <= 1.0 ? 1 : 0;
      }

  const std::array<double, 3> rim_pad = {spec.rim_thickness * sp.x, spec.rim_thickness * sp.y,
                                         spec.rim_thickness * sp.z};
  const double margin_mm = 3.0 * std::max({sp.x, sp.y, sp.z});
  const std::array<double, 3> margin_pad = {rim_pad[0] + margin_mm, rim_pad[1] + margin_mm, rim_pad[2] + margin_mm};
  Ellipsoid brain_inner = brain;
  for (int a = 0; a < 3; ++a) brain_inner.semi_mm[a] -= margin_mm;

  const auto place = [&](bool decoy) {
    const auto [dlo, dhi] = spec.diameter_range_mm;
    for (int attempt = 0; attempt < 5000; ++attempt) {
      const double d = dlo + (dhi - dlo) * unit(rng);
      const double r1 = 0.5 + 0.5 * unit(rng), r2 = 0.5 + 0.5 * unit(rng);
      const double a = (d / 2.0) / std::cbrt(r1 * r2);
      std::array<double, 3> axes = {a, a * r1, a * r2};
      std::sort(axes.begin(), axes.end());
      // Smallest semi-axis through-plane; the two larger ones in-plane.
      const bool swap_xy = unit(rng) < 0.5;
      Ellipsoid e{{}, {swap_xy ? axes[1] : axes[2], swap_xy ? axes[2] : axes[1], axes[0]}};

      const Ellipsoid& box = decoy ? brain_inner : region;
      std::array<std::size_t, 3> cv{};
      for (int k = 0; k < 3; ++k) {
        const double lo = std::max(0.0, box.center_mm[k] - box.semi_mm[k]);
        const double hi = std::min(extent[k] - sp[k], box.center_mm[k] + box.semi_mm[k]);
        cv[k] = static_cast<std::size_t>(std::lround((lo + (hi - lo) * unit(rng)) / sp[k]));
        cv[k] = std::min(cv[k], shape[k] - 1);
        e.center_mm[k] = static_cast<double>(cv[k]) * sp[k];
      }
      if (!decoy && region.radius2(e.center_mm) > 1.0) continue;

      // Lesion plus rim plus margin must stay inside the brain, clear of
      // other lesions, and (for decoys) clear of the region.
      const Ellipsoid outer = grown(e, margin_pad);
      bool ok = true;
      for_each_voxel(footprint(outer, 0.0, sp, shape), [&](std::size_t x, std::size_t y, std::size_t z) {
        if (!ok) return;
        const auto p = position_mm(x, y, z, sp);
        if (outer.radius2(p) > 1.0) return;
        if (occupied(x, y, z)) ok = false;
        else if (brain_inner.radius2(p) > 1.0) ok = false;
        else if (decoy && grown(e, rim_pad).radius2(p) <= 1.0 && ph.region(x, y, z)) ok = false;
      });
      if (!ok) continue;
      // The footprint may have been clipped by the volume border.
      for (int k = 0; k < 3; ++k)
        if (e.center_mm[k] - outer.semi_mm[k] < 0 || e.center_mm[k] + outer.semi_mm[k] > extent[k] - sp[k]) ok = false;
      if (!ok) continue;

      PlantedLesion lesion;
      lesion.center = cv;
      lesion.semi_axes_mm = e.semi_mm;
      lesion.decoy = decoy;
      const Ellipsoid with_rim = grown(e, rim_pad);
      for_each_voxel(footprint(outer, 0.0, sp, shape), [&](std::size_t x, std::size_t y, std::size_t z) {
        const auto p = position_mm(x, y, z, sp);
        if (outer.radius2(p) <= 1.0) occupied(x, y, z) = 1;
        if (e.radius2(p) <= 1.0) {
          (decoy ? ph.decoys : truth)(x, y, z) = 1;
          ++lesion.voxels;
        } else if (with_rim.radius2(p) <= 1.0) {
          rim(x, y, z) = 1;
        }
      });
      lesion.equivalent_diameter_mm = equivalent_diameter(lesion.voxels, sp);
      ph.lesions.push_back(lesion);
      return;
    }
    fail(ErrorCode::config, decoy ? "cannot fit decoys outside the prevalence region"
                                   : "cannot fit lacunes inside the prevalence region");
  };
  for (std::size_t i = 0; i < spec.n_lacunes; ++i) place(false);
  for (std::size_t i = 0; i < spec.n_decoys_outside_region; ++i) place(true);

  // Smooth multiplicative field with seeded phases.
  std::array<double, 6> phase{};
  for (auto& p : phase) p = 2.0 * std::numbers::pi * unit(rng);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_level));

  std::array<Volume3D, 3> mods = {Volume3D(shape, sp), Volume3D(shape, sp), Volume3D(shape, sp)};
  const IntensityModel& im = spec.intensity;
  for (std::size_t z = 0; z < shape.nz; ++z)
    for (std::size_t y = 0; y < shape.ny; ++y)
      for (std::size_t x = 0; x < shape.nx; ++x) {
        const std::size_t i = truth.index(x, y, z);
        const auto p = position_mm(x, y, z, sp);
        const double field = 1.0 + im.field_amplitude * std::sin(2 * std::numbers::pi * p[0] / extent[0] + phase[0]) *
                                       std::cos(2 * std::numbers::pi * p[1] / extent[1] + phase[1]) +
                             im.field_amplitude * 0.5 * std::sin(2 * std::numbers::pi * p[2] / extent[2] + phase[2]);
        for (int m = 0; m < 3; ++m) {
          float v = 0.0f;
          if (!ph.csf[i]) {
            if (truth[i] || ph.decoys[i]) v = im.core[m];
            else if (rim[i]) v = im.rim[m];
            else v = static_cast<float>(im.tissue[m] * field);
          }
          mods[m][i] = v;
        }
      }
  for (auto& v : mods)
    for (auto& x : v.data()) x += noise(rng);

  ph.image.t1 = std::move(mods[0]);
  ph.image.t2 = std::move(mods[1]);
  ph.image.flair = std::move(mods[2]);
  ph.image.truth = std::move(truth);
  return ph;
}

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"shape", {s.shape.nx, s.shape.ny, s.shape.nz}},
           {"spacing_mm", {s.spacing.x, s.spacing.y, s.spacing.z}},
           {"n_lacunes", s.n_lacunes},
           {"n_decoys_outside_region", s.n_decoys_outside_region},
           {"diameter_range_mm", s.diameter_range_mm},
           {"allow_any_diameter", s.allow_any_diameter},
           {"rim_thickness", s.rim_thickness},
           {"noise_level", s.noise_level},
           {"seed", s.seed},
           {"brain_fraction", s.brain_fraction},
           {"region_fraction", s.region_fraction},
           {"intensity",
            {{"tissue", s.intensity.tissue},
             {"core", s.intensity.core},
             {"rim", s.intensity.rim},
             {"field_amplitude", s.intensity.field_amplitude}}}};
}

void from_json(const json& j, PhantomSpec& s) {
  reject_unknown_keys(j,
                      {"shape", "spacing_mm", "n_lacunes", "n_decoys_outside_region", "diameter_range_mm",
                       "allow_any_diameter", "rim_thickness", "noise_level", "seed", "brain_fraction",
                       "region_fraction", "intensity"},
                      "phantom spec");
  if (j.contains("shape")) {
    std::array<std::size_t, 3> a{};
    read_optional(j, "shape", a);
    s.shape = {a[0], a[1], a[2]};
  }
  if (j.contains("spacing_mm")) {
    std::array<double, 3> a{};
    read_optional(j, "spacing_mm", a);
    s.spacing = {a[0], a[1], a[2]};
  }
  read_optional(j, "n_lacunes", s.n_lacunes);
  read_optional(j, "n_decoys_outside_region", s.n_decoys_outside_region);
  read_optional(j, "diameter_range_mm", s.diameter_range_mm);
  read_optional(j, "allow_any_diameter", s.allow_any_diameter);
  read_optional(j, "rim_thickness", s.rim_thickness);
  read_optional(j, "noise_level", s.noise_level);
  read_optional(j, "seed", s.seed);
  read_optional(j, "brain_fraction", s.brain_fraction);
  read_optional(j, "region_fraction", s.region_fraction);
  if (j.contains("intensity")) {
    const json& i = j.at("intensity");
    reject_unknown_keys(i, {"tissue", "core", "rim", "field_amplitude"}, "phantom intensity model");
    read_optional(i, "tissue", s.intensity.tissue);
    read_optional(i, "core", s.intensity.core);
    read_optional(i, "rim", s.intensity.rim);
    read_optional(i, "field_amplitude", s.intensity.field_amplitude);
  }
  validate(s);
}

void to_json(json& j, const PlantedLesion& l) {
  j = json{{"center_voxel", l.center},
           {"semi_axes_mm", l.semi_axes_mm},
           {"equivalent_diameter_mm", l.equivalent_diameter_mm},
           {"voxels", l.voxels},
           {"decoy", l.decoy}};
}

void write_phantom(const std::filesystem::path& dir, const Phantom& p, const PhantomSpec& spec) {
  std::filesystem::create_directories(dir);
  nifti::write_volume(dir / "t1.nii.gz", p.image.t1);
  nifti::write_volume(dir / "t2.nii.gz", p.image.t2);
  nifti::write_volume(dir / "flair.nii.gz", p.image.flair);
  nifti::write_mask(dir / "truth.nii.gz", *p.image.truth);
  nifti::write_mask(dir / "region.nii.gz", p.region);
  nifti::write_mask(dir / "decoys.nii.gz", p.decoys);
  nifti::write_mask(dir / "csf.nii.gz", p.csf);
  json manifest{{"case_id", p.image.case_id}, {"spec", spec}, {"lesions", p.lesions}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace lacune
