#include "lacune/volume.hpp"

#include <cmath>

#include "lacune/kernels.hpp"
#include "lacune/nifti.hpp"

namespace lacune {

bool same_spacing(const Spacing3& a, const Spacing3& b, double tol) {
  return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol && std::abs(a.z - b.z) <= tol;
}

Affine diagonal_affine(const Spacing3& s) {
  return {s.x, 0, 0, 0, 0, s.y, 0, 0, 0, 0, s.z, 0};
}

std::size_t count_nonzero(const Mask3D& m) {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](auto v) { return v != 0; }));
}

void require_binary(const Mask3D& m, const std::string& what) {
  for (auto v : m.data())
    require(v <= 1, ErrorCode::non_binary, what + " is not binary");
}

Mask3D to_binary_mask(const Volume3D& v, const std::string& what) {
  Mask3D m = v.like<std::uint8_t>();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float x = v[i];
    require(std::isfinite(x), ErrorCode::non_finite, what + " contains NaN/Inf");
    require(x == 0.0f || x == 1.0f, ErrorCode::non_binary,
            what + " contains value " + std::to_string(x) + " outside {0,1}");
    m[i] = x == 1.0f ? 1 : 0;
  }
  return m;
}

namespace {

void require_finite(const Volume3D& v, const std::string& what) {
  for (float x : v.data())
    require(std::isfinite(x), ErrorCode::non_finite, what + " contains NaN/Inf voxels");
}

std::string describe(const Shape3& s) {
  return std::to_string(s.nx) + "x" + std::to_string(s.ny) + "x" + std::to_string(s.nz);
}

}  // namespace

void validate_case(const MultiModalCase& c) {
  require_finite(c.t1, "T1");
  require_finite(c.t2, "T2");
  require_finite(c.flair, "FLAIR");
  const auto check = [&](const auto& v, const char* name) {
    require(v.shape() == c.t1.shape(), ErrorCode::shape_mismatch,
            std::string(name) + " shape " + describe(v.shape()) + " differs from T1 shape " + describe(c.t1.shape()));
    require(same_spacing(v.spacing(), c.t1.spacing()), ErrorCode::shape_mismatch,
            std::string(name) + " spacing differs from T1 spacing");
  };
  check(c.t2, "T2");
  check(c.flair, "FLAIR");
  if (c.truth) {
    check(*c.truth, "truth");
    require_binary(*c.truth, "truth");
  }
}

MultiModalCase load_case(const std::filesystem::path& t1, const std::filesystem::path& t2,
                         const std::filesystem::path& flair, const std::optional<std::filesystem::path>& truth,
                         std::string case_id) {
  MultiModalCase c;
  c.case_id = case_id.empty() ? t1.parent_path().filename().string() : std::move(case_id);
  c.t1 = nifti::read_volume(t1);
  c.t2 = nifti::read_volume(t2);
  c.flair = nifti::read_volume(flair);
  if (truth) c.truth = nifti::read_mask(*truth);
  validate_case(c);
  return c;
}

MultiModalCase load_case_dir(const std::filesystem::path& dir, ObserverFusion fusion) {
  const auto need = [&](const char* stem) {
    auto p = nifti::find_image(dir, stem);
    require(p.has_value(), ErrorCode::missing_file, std::string("missing ") + stem + ".nii[.gz] in " + dir.string());
    return *p;
  };
  const auto truth = nifti::find_image(dir, "truth");
  MultiModalCase c = load_case(need("t1"), need("t2"), need("flair"), truth, dir.filename().string());
  if (!truth) {
    const auto a = nifti::find_image(dir, "truth_obs1"), b = nifti::find_image(dir, "truth_obs2");
    if (a && b) {
      c.truth = fuse_observers(nifti::read_mask(*a), nifti::read_mask(*b), fusion);
      validate_case(c);
    }
  }
  return c;
}

Mask3D fuse_observers(const Mask3D& a, const Mask3D& b, ObserverFusion mode) {
  require(a.same_geometry(b), ErrorCode::shape_mismatch, "observer masks differ in geometry");
  Mask3D out = a.like<std::uint8_t>();
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = mode == ObserverFusion::union_ ? (a[i] | b[i]) : (a[i] & b[i]);
  return out;
}

Volume3D zscore_normalize(const Volume3D& v, const NormalizeOptions& options) {
  require(v.size() >= 2, ErrorCode::degenerate_input, "normalization needs at least two voxels");
  const kernels::Moments m = kernels::parallel::moments(v, options.foreground_only);
  require(m.count >= 2 && m.min != m.max, ErrorCode::degenerate_input,
          "constant volume has zero variance");
  Volume3D out = v.like<float>();
  const auto n = static_cast<long>(v.size());
  const double mean = m.mean, inv = 1.0 / m.stddev;
  const float* src = v.data().data();
  float* dst = out.data().data();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) dst[i] = static_cast<float>((src[i] - mean) * inv);
  return out;
}

MultiModalCase normalize_case(const MultiModalCase& c, const NormalizeOptions& options) {
  MultiModalCase out;
  out.case_id = c.case_id;
  out.t1 = zscore_normalize(c.t1, options);
  out.t2 = zscore_normalize(c.t2, options);
  out.flair = zscore_normalize(c.flair, options);
  out.truth = c.truth;
  return out;
}

SliceStack slice_stack(const MultiModalCase& c, std::size_t z) {
  require(z < c.shape().nz, ErrorCode::out_of_range,
          "slice " + std::to_string(z) + " outside [0, " + std::to_string(c.shape().nz) + ")");
  SliceStack s;
  s.slice_index = z;
  s.pixel_mm = std::sqrt(c.spacing().x * c.spacing().y);
  s.channels = {axial_plane(c.t1, z), axial_plane(c.t2, z), axial_plane(c.flair, z)};
  return s;
}

}  // namespace lacune
