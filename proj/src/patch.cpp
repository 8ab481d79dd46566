#include "lacune/patch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lacune {

std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t patch_size, std::size_t stride) {
  require(patch_size >= 1 && patch_size <= dim, ErrorCode::invalid_argument,
          "patch size " + std::to_string(patch_size) + " larger than plane dimension " + std::to_string(dim));
  require(stride >= 1, ErrorCode::invalid_argument, "patch stride must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch_size <= dim; o += stride) out.push_back(o);
  if (out.back() + patch_size < dim) out.push_back(dim - patch_size);
  return out;
}

PatchGrid compute_grid(std::size_t rows, std::size_t cols, std::size_t patch_size, double overlap_fraction) {
  require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, ErrorCode::invalid_argument,
          "overlap fraction must lie in [0, 1)");
  require(patch_size <= rows && patch_size <= cols, ErrorCode::invalid_argument,
          "patch " + std::to_string(patch_size) + " larger than plane " + std::to_string(rows) + "x" +
              std::to_string(cols));
  PatchGrid g;
  g.patch_size = patch_size;
  g.rows = rows;
  g.cols = cols;
  g.stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(patch_size) * (1.0 - overlap_fraction))));
  const auto ro = axis_origins(rows, patch_size, g.stride);
  const auto co = axis_origins(cols, patch_size, g.stride);
  g.origins.reserve(ro.size() * co.size());
  for (auto r : ro)
    for (auto c : co) g.origins.push_back({r, c});
  return g;
}

namespace {

PlaneF crop(const PlaneF& src, PixelOrigin o, std::size_t size) {
  PlaneF out(size, size);
  for (std::size_t r = 0; r < size; ++r)
    std::copy_n(src.data.begin() + static_cast<long>((o.row + r) * src.cols + o.col), size,
                out.data.begin() + static_cast<long>(r * size));
  return out;
}

}  // namespace

std::vector<Patch2D> extract_patches(const std::vector<PlaneF>& channels, std::size_t slice_index,
                                     const PatchGrid& grid) {
  require(!channels.empty(), ErrorCode::empty_input, "no channels to extract from");
  for (const auto& ch : channels)
    require(ch.rows == grid.rows && ch.cols == grid.cols, ErrorCode::shape_mismatch,
            "patch grid does not match plane shape");
  std::vector<Patch2D> out;
  out.reserve(grid.origins.size());
  for (const auto& o : grid.origins) {
    Patch2D p;
    p.origin = o;
    p.size = grid.patch_size;
    p.slice_index = slice_index;
    for (const auto& ch : channels) p.channels.push_back(crop(ch, o, grid.patch_size));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Patch2D> extract_patches(const SliceStack& stack, const PatchGrid& grid) {
  auto patches =
      extract_patches(std::vector<PlaneF>(stack.channels.begin(), stack.channels.end()), stack.slice_index, grid);
  for (auto& p : patches) p.pixel_mm = stack.pixel_mm;
  return patches;
}

Patch2D extract_patch(const SliceStack& stack, PixelOrigin origin, std::size_t size) {
  require(origin.row + size <= stack.rows() && origin.col + size <= stack.cols(), ErrorCode::out_of_range,
          "patch exceeds plane bounds");
  Patch2D p;
  p.origin = origin;
  p.size = size;
  p.slice_index = stack.slice_index;
  p.pixel_mm = stack.pixel_mm;
  for (const auto& ch : stack.channels) p.channels.push_back(crop(ch, origin, size));
  return p;
}

PixelOrigin centered_origin(double row, double col, std::size_t size, std::size_t rows, std::size_t cols) {
  require(size <= rows && size <= cols, ErrorCode::invalid_argument, "window larger than plane");
  const auto place = [size](double center, std::size_t dim) {
    const double start = std::round(center) - static_cast<double>(size / 2);
    const double hi = static_cast<double>(dim - size);
    return static_cast<std::size_t>(std::clamp(start, 0.0, hi));
  };
  return {place(row, rows), place(col, cols)};
}

PlaneF upsample_plane_nn(const PlaneF& p, std::size_t factor) {
  require(factor >= 1, ErrorCode::invalid_argument, "upsample factor must be >= 1");
  PlaneF out(p.rows * factor, p.cols * factor);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = p(r / factor, c / factor);
  return out;
}

Patch2D upsample_nn(const Patch2D& p, std::size_t factor) {
  require(factor >= 1, ErrorCode::invalid_argument, "upsample factor must be >= 1");
  Patch2D out = p;
  out.size = p.size * factor;
  out.pixel_mm = p.pixel_mm / static_cast<double>(factor);
  for (auto& ch : out.channels) ch = upsample_plane_nn(ch, factor);
  return out;
}

Patch2D downsample_nn(const Patch2D& p, std::size_t factor) {
  require(factor >= 1, ErrorCode::invalid_argument, "downsample factor must be >= 1");
  require(p.size % factor == 0, ErrorCode::invalid_argument,
          "patch size " + std::to_string(p.size) + " not divisible by " + std::to_string(factor));
  Patch2D out = p;
  out.size = p.size / factor;
  out.pixel_mm = p.pixel_mm * static_cast<double>(factor);
  for (auto& ch : out.channels) {
    PlaneF small(out.size, out.size);
    for (std::size_t r = 0; r < out.size; ++r)
      for (std::size_t c = 0; c < out.size; ++c) small(r, c) = ch(r * factor, c * factor);
    ch = std::move(small);
  }
  return out;
}

namespace {

template <class T, class Pred>
PlaneU8 sample_mask(const Plane<T>& m, std::size_t factor, Pred on) {
  require(factor >= 1, ErrorCode::invalid_argument, "downsample factor must be >= 1");
  require(m.rows % factor == 0 && m.cols % factor == 0, ErrorCode::invalid_argument,
          "mask size not divisible by downsample factor");
  PlaneU8 out(m.rows / factor, m.cols / factor);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = on(m(r * factor, c * factor)) ? 1 : 0;
  return out;
}

}  // namespace

PlaneU8 downsample_mask_nn(const PlaneF& mask, std::size_t factor) {
  return sample_mask(mask, factor, [](float v) { return v >= 0.5f; });
}

PlaneU8 downsample_mask_nn(const PlaneU8& mask, std::size_t factor) {
  return sample_mask(mask, factor, [](std::uint8_t v) { return v != 0; });
}

PlaneF reconstruct(const std::vector<Patch2D>& patches, const PatchGrid& grid, Fusion fusion, std::size_t channel) {
  require(!patches.empty(), ErrorCode::empty_input, "no patches to reconstruct");
  const std::size_t size = patches.front().size;
  for (const auto& p : patches) {
    require(p.size == size && p.size == grid.patch_size, ErrorCode::shape_mismatch,
            "inconsistent patch sizes in reconstruction");
    require(channel < p.channels.size(), ErrorCode::out_of_range, "channel index out of range");
    require(std::binary_search(grid.origins.begin(), grid.origins.end(), p.origin), ErrorCode::invalid_argument,
            "patch origin not in grid");
  }

  // Double accumulation keeps mean fusion of identical values exact.
  Plane<double> acc(grid.rows, grid.cols, 0.0);
  Plane<std::uint32_t> hits(grid.rows, grid.cols, 0);
  for (const auto& p : patches) {
    const PlaneF& src = p.channels[channel];
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) {
        double& dst = acc(p.origin.row + r, p.origin.col + c);
        auto& n = hits(p.origin.row + r, p.origin.col + c);
        const double v = src(r, c);
        if (fusion == Fusion::max) dst = n == 0 ? v : std::max(dst, v);
        else dst += v;
        ++n;
      }
  }
  PlaneF out(grid.rows, grid.cols, 0.0f);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (hits.data[i] == 0) continue;
    const double v = fusion == Fusion::mean ? acc.data[i] / hits.data[i] : acc.data[i];
    out.data[i] = static_cast<float>(v);
  }
  return out;
}

}  // namespace lacune
