#include "lacune/overlay.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

#include <png.h>

namespace lacune {

Rgb8 render_overlay(const Volume3D& flair, std::size_t z, const Mask3D* prevalence, const Mask3D* truth,
                    const Mask3D& prediction) {
  require(prediction.same_geometry(flair), ErrorCode::shape_mismatch, "overlay prediction geometry differs from image");
  require(!prevalence || prevalence->same_geometry(flair), ErrorCode::shape_mismatch, "overlay mask geometry differs");
  require(!truth || truth->same_geometry(flair), ErrorCode::shape_mismatch, "overlay truth geometry differs");
  const PlaneF img = axial_plane(flair, z);
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  const float range = *hi > *lo ? *hi - *lo : 1.0f;

  Rgb8 out{img.rows, img.cols, std::vector<std::uint8_t>(img.rows * img.cols * 3)};
  const std::size_t off = img.rows * img.cols * z;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float g = 255.0f * (img.data[i] - *lo) / range;
    float rgb[3] = {g, g, g};
    if (prevalence && (*prevalence)[off + i]) {
      rgb[0] = 0.7f * rgb[0] + 0.3f * 255.0f;
      rgb[1] = 0.7f * rgb[1] + 0.3f * 105.0f;
      rgb[2] = 0.7f * rgb[2] + 0.3f * 180.0f;
    }
    const bool t = truth && (*truth)[off + i], p = prediction[off + i] != 0;
    if (t && p) rgb[0] = 255, rgb[1] = 0, rgb[2] = 255;
    else if (t) rgb[0] = 255, rgb[1] = 0, rgb[2] = 0;
    else if (p) rgb[0] = 0, rgb[1] = 80, rgb[2] = 255;
    for (int k = 0; k < 3; ++k) out.data[i * 3 + k] = static_cast<std::uint8_t>(std::clamp(rgb[k], 0.0f, 255.0f));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Rgb8& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  require(fp != nullptr, ErrorCode::io, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols), static_cast<png_uint_32>(image.rows), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.rows; ++r)
    png_write_row(png, const_cast<png_bytep>(image.data.data() + r * image.cols * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::filesystem::path> write_overlays(const std::filesystem::path& dir, const std::string& case_id,
                                                  const Volume3D& flair, const Mask3D* prevalence,
                                                  const Mask3D* truth, const Mask3D& prediction) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const std::size_t plane = flair.shape().nx * flair.shape().ny;
  for (std::size_t z = 0; z < flair.shape().nz; ++z) {
    bool any = false;
    for (std::size_t i = z * plane; i < (z + 1) * plane && !any; ++i)
      any = prediction[i] || (truth && (*truth)[i]);
    if (!any) continue;
    char name[32];
    std::snprintf(name, sizeof name, "_z%03zu.png", z);
    const auto path = dir / (case_id + name);
    write_png(path, render_overlay(flair, z, prevalence, truth, prediction));
    written.push_back(path);
  }
  return written;
}

}  // namespace lacune
