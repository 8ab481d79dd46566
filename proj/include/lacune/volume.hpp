#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lacune/error.hpp"

namespace lacune {

struct Shape3 {
  std::size_t nx = 1, ny = 1, nz = 1;

  std::size_t size() const { return nx * ny * nz; }
  std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Physical voxel size in mm.
struct Spacing3 {
  double x = 1.0, y = 1.0, z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

bool same_spacing(const Spacing3& a, const Spacing3& b, double tol = 1e-6);

/// Row-major 3x4 voxel-to-world matrix (mm), as stored in a NIfTI sform.
using Affine = std::array<double, 12>;

Affine diagonal_affine(const Spacing3& spacing);

/// Dense scalar grid indexed (x, y, z) with x fastest.
template <class T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  Grid3(Shape3 shape, Spacing3 spacing, T fill = T{})
      : shape_(shape), spacing_(spacing), affine_(diagonal_affine(spacing)), data_(shape.size(), fill) {
    validate_geometry();
  }

  const Shape3& shape() const { return shape_; }
  const Spacing3& spacing() const { return spacing_; }
  const Affine& affine() const { return affine_; }
  void set_affine(const Affine& a) { affine_ = a; }

  std::size_t size() const { return data_.size(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + shape_.nx * (y + shape_.ny * z);
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  /// Same shape, spacing, and affine; data zero/filled.
  template <class U>
  Grid3<U> like(U fill = U{}) const {
    Grid3<U> out(shape_, spacing_, fill);
    out.set_affine(affine_);
    return out;
  }

  bool same_geometry(const Shape3& s, const Spacing3& sp) const {
    return shape_ == s && same_spacing(spacing_, sp);
  }
  template <class U>
  bool same_geometry(const Grid3<U>& other) const {
    return same_geometry(other.shape(), other.spacing());
  }

  friend bool operator==(const Grid3& a, const Grid3& b) {
    return a.shape_ == b.shape_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
  }

 private:
  void validate_geometry() const {
    require(shape_.nx >= 1 && shape_.ny >= 1 && shape_.nz >= 1, ErrorCode::invalid_argument,
            "volume shape entries must be >= 1");
    require(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0, ErrorCode::invalid_argument,
            "voxel spacing must be positive");
  }

  Shape3 shape_{};
  Spacing3 spacing_{};
  Affine affine_ = diagonal_affine(Spacing3{});
  std::vector<T> data_ = std::vector<T>(1);
};

using Volume3D = Grid3<float>;
using Mask3D = Grid3<std::uint8_t>;

/// 2D plane indexed (row, col); for axial slices row = y and col = x.
template <class T>
struct Plane {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

using PlaneF = Plane<float>;
using PlaneU8 = Plane<std::uint8_t>;

struct MultiModalCase {
  std::string case_id;
  Volume3D t1, t2, flair;
  std::optional<Mask3D> truth;

  const Shape3& shape() const { return t1.shape(); }
  const Spacing3& spacing() const { return t1.spacing(); }
};

/// Three co-indexed axial planes ordered (T1, T2, FLAIR).
struct SliceStack {
  std::size_t slice_index = 0;
  double pixel_mm = 1.0;  // sqrt of the in-plane pixel area
  std::array<PlaneF, 3> channels;

  std::size_t rows() const { return channels[0].rows; }
  std::size_t cols() const { return channels[0].cols; }
};

enum class ObserverFusion { union_, intersection };

struct NormalizeOptions {
  /// Restrict mean/std estimation to nonzero voxels (skull-stripped inputs).
  bool foreground_only = false;
};

/// Checks shape/spacing agreement, binary truth, and finite intensities.
void validate_case(const MultiModalCase& c);

MultiModalCase load_case(const std::filesystem::path& t1, const std::filesystem::path& t2,
                         const std::filesystem::path& flair,
                         const std::optional<std::filesystem::path>& truth = std::nullopt,
                         std::string case_id = {});

/// Loads a case directory holding t1/t2/flair[/truth].nii[.gz]. When
/// truth_obs1 and truth_obs2 exist instead of truth, they are fused.
MultiModalCase load_case_dir(const std::filesystem::path& dir,
                             ObserverFusion fusion = ObserverFusion::union_);

Mask3D fuse_observers(const Mask3D& a, const Mask3D& b, ObserverFusion mode);

/// Rejects any value outside {0, 1}.
Mask3D to_binary_mask(const Volume3D& v, const std::string& what);

Volume3D zscore_normalize(const Volume3D& v, const NormalizeOptions& options = {});
MultiModalCase normalize_case(const MultiModalCase& c, const NormalizeOptions& options = {});

SliceStack slice_stack(const MultiModalCase& c, std::size_t z);

template <class T>
Plane<T> axial_plane(const Grid3<T>& v, std::size_t z) {
  require(z < v.shape().nz, ErrorCode::out_of_range, "slice index out of range");
  Plane<T> p(v.shape().ny, v.shape().nx);
  const std::size_t n = p.data.size();
  const auto* src = v.data().data() + n * z;
  std::copy(src, src + n, p.data.begin());
  return p;
}

template <class T>
void set_axial_plane(Grid3<T>& v, std::size_t z, const Plane<T>& p) {
  require(z < v.shape().nz, ErrorCode::out_of_range, "slice index out of range");
  require(p.rows == v.shape().ny && p.cols == v.shape().nx, ErrorCode::shape_mismatch,
          "plane does not match volume slice shape");
  std::copy(p.data.begin(), p.data.end(), v.data().begin() + p.data.size() * z);
}

std::size_t count_nonzero(const Mask3D& m);
void require_binary(const Mask3D& m, const std::string& what);

}  // namespace lacune
