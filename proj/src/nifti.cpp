#include "lacune/nifti.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include <zlib.h>

namespace lacune::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
  dt_uint8 = 2,
  dt_int16 = 4,
  dt_int32 = 8,
  dt_float32 = 16,
  dt_float64 = 64,
  dt_int8 = 256,
  dt_uint16 = 512,
  dt_uint32 = 768,
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorCode::missing_file, "file not found: " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  require(f != nullptr, ErrorCode::io, "cannot open " + path.string());
  std::vector<unsigned char> buf;
  std::array<unsigned char, 1 << 16> chunk{};
  while (true) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      fail(ErrorCode::io, "decompression failed for " + path.string());
    }
    if (n == 0) break;
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return buf;
}

class HeaderView {
 public:
  HeaderView(const unsigned char* p, bool swap) : p_(p), swap_(swap) {}

  template <class T>
  T get(std::size_t offset) const {
    T v;
    unsigned char b[sizeof(T)];
    std::memcpy(b, p_ + offset, sizeof(T));
    if (swap_) std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

 private:
  const unsigned char* p_;
  bool swap_;
};

template <class T>
void decode(const unsigned char* src, std::size_t n, bool swap, float slope, float inter, std::vector<float>& out) {
  out.resize(n);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(b, src + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    out[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
  }
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Affine affine_from_quaternion(const HeaderView& h, const std::array<double, 3>& pix) {
  const double b = h.get<float>(256), c = h.get<float>(260), d = h.get<float>(264);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  double qfac = h.get<float>(76);
  qfac = qfac < 0 ? -1.0 : 1.0;
  const Mat3 r = {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                   {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                   {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c}}};
  const std::array<double, 3> scale = {pix[0], pix[1], pix[2] * qfac};
  const std::array<double, 3> off = {h.get<float>(268), h.get<float>(272), h.get<float>(276)};
  Affine out{};
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) out[row * 4 + col] = r[row][col] * scale[col];
    out[row * 4 + 3] = off[row];
  }
  return out;
}

// Permutes/flips voxel axes so that internal axis j follows world axis j
// in the positive (RAS) direction as closely as the affine allows.
Volume3D reorient(const std::vector<float>& raw, const std::array<std::size_t, 3>& dims,
                  const std::array<double, 3>& pix, const Affine& affine) {
  std::array<int, 3> perm = {0, 1, 2};  // voxel axis i -> world axis perm[i]
  std::array<int, 3> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int i = 0; i < 3; ++i) score += std::abs(affine[perm[i] * 4 + i]);
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::array<bool, 3> flip{};
  std::array<int, 3> source_axis{};  // world axis j <- voxel axis
  for (int i = 0; i < 3; ++i) {
    flip[i] = affine[best[i] * 4 + i] < 0;
    source_axis[best[i]] = i;
  }

  const Shape3 shape{dims[source_axis[0]], dims[source_axis[1]], dims[source_axis[2]]};
  const Spacing3 spacing{pix[source_axis[0]], pix[source_axis[1]], pix[source_axis[2]]};
  Volume3D v(shape, spacing);

  Affine out{};
  for (int row = 0; row < 3; ++row) out[row * 4 + 3] = affine[row * 4 + 3];
  for (int j = 0; j < 3; ++j) {
    const int i = source_axis[j];
    const double sign = flip[i] ? -1.0 : 1.0;
    for (int row = 0; row < 3; ++row) {
      out[row * 4 + j] = sign * affine[row * 4 + i];
      if (flip[i]) out[row * 4 + 3] += affine[row * 4 + i] * static_cast<double>(dims[i] - 1);
    }
  }
  v.set_affine(out);

  std::array<std::size_t, 3> src{};
  for (std::size_t z = 0; z < shape.nz; ++z)
    for (std::size_t y = 0; y < shape.ny; ++y)
      for (std::size_t x = 0; x < shape.nx; ++x) {
        const std::array<std::size_t, 3> dst = {x, y, z};
        for (int j = 0; j < 3; ++j) {
          const int i = source_axis[j];
          src[i] = flip[i] ? dims[i] - 1 - dst[j] : dst[j];
        }
        v(x, y, z) = raw[src[0] + dims[0] * (src[1] + dims[1] * src[2])];
      }
  return v;
}

template <class T>
void put(std::vector<unsigned char>& h, std::size_t offset, T value) {
  std::memcpy(h.data() + offset, &value, sizeof(T));
}

void write_raw(const std::filesystem::path& path, const Shape3& shape, const Spacing3& spacing,
               const Affine& affine, DataType type, std::int16_t bitpix, const void* data,
               std::size_t bytes) {
  std::vector<unsigned char> h(kVoxOffset, 0);
  put<std::int32_t>(h, 0, kHeaderSize);
  put<char>(h, 38, 'r');
  const std::array<std::int16_t, 8> dim = {3, static_cast<std::int16_t>(shape.nx), static_cast<std::int16_t>(shape.ny),
                                          static_cast<std::int16_t>(shape.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(h, 40 + 2 * i, dim[i]);
  put<std::int16_t>(h, 70, type);
  put<std::int16_t>(h, 72, bitpix);
  const std::array<float, 8> pixdim = {1.0f, static_cast<float>(spacing.x), static_cast<float>(spacing.y),
                                      static_cast<float>(spacing.z), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(h, 76 + 4 * i, pixdim[i]);
  put<float>(h, 108, static_cast<float>(kVoxOffset));
  put<float>(h, 112, 1.0f);
  put<float>(h, 116, 0.0f);
  put<char>(h, 123, 2);  // mm
  put<std::int16_t>(h, 252, 0);
  put<std::int16_t>(h, 254, 1);
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 4; ++col) put<float>(h, 280 + 16 * row + 4 * col, static_cast<float>(affine[row * 4 + col]));
  std::memcpy(h.data() + 344, "n+1\0", 4);

  require(shape.nx < 32768 && shape.ny < 32768 && shape.nz < 32768, ErrorCode::invalid_argument,
          "volume too large for NIfTI-1");
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.c_str(), gz ? "wb6" : "wbT");
  require(f != nullptr, ErrorCode::io, "cannot open for writing: " + path.string());
  const bool ok = gzwrite(f, h.data(), static_cast<unsigned>(h.size())) == static_cast<int>(h.size()) &&
                  (bytes == 0 || gzwrite(f, data, static_cast<unsigned>(bytes)) == static_cast<int>(bytes));
  const int closed = gzclose(f);
  require(ok && closed == Z_OK, ErrorCode::io, "write failed: " + path.string());
}

}  // namespace

Volume3D read_volume(const std::filesystem::path& path) {
  const std::vector<unsigned char> buf = read_all(path);
  require(buf.size() >= kHeaderSize, ErrorCode::parse, "truncated NIfTI header: " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, buf.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    swap = true;
    HeaderView probe(buf.data(), true);
    require(probe.get<std::int32_t>(0) == kHeaderSize, ErrorCode::parse, "not a NIfTI-1 file: " + path.string());
  }
  const HeaderView h(buf.data(), swap);
  require(std::memcmp(buf.data() + 344, "n+1", 3) == 0 || std::memcmp(buf.data() + 344, "ni1", 3) == 0,
          ErrorCode::parse, "bad NIfTI magic: " + path.string());
  require(std::memcmp(buf.data() + 344, "n+1", 3) == 0, ErrorCode::parse,
          "detached .hdr/.img pairs are not supported: " + path.string());

  const auto ndim = h.get<std::int16_t>(40);
  require(ndim >= 1 && ndim <= 7, ErrorCode::parse, "invalid dim[0] in " + path.string());
  std::array<std::size_t, 3> dims = {1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    const auto d = h.get<std::int16_t>(40 + 2 * i);
    require(d >= 1, ErrorCode::parse, "invalid dimension in " + path.string());
    if (i <= 3) dims[i - 1] = static_cast<std::size_t>(d);
    else require(d == 1, ErrorCode::parse, "only 3D volumes are supported: " + path.string());
  }
  std::array<double, 3> pix{};
  for (int i = 0; i < 3; ++i) {
    pix[i] = std::abs(static_cast<double>(h.get<float>(80 + 4 * i)));
    if (!(pix[i] > 0) || !std::isfinite(pix[i])) pix[i] = 1.0;
  }

  const auto type = h.get<std::int16_t>(70);
  const auto offset = static_cast<std::size_t>(h.get<float>(108));
  float slope = h.get<float>(112), inter = h.get<float>(116);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  if (!std::isfinite(inter)) inter = 0.0f;

  const std::size_t n = dims[0] * dims[1] * dims[2];
  std::size_t elem = 0;
  switch (type) {
    case dt_uint8: case dt_int8: elem = 1; break;
    case dt_int16: case dt_uint16: elem = 2; break;
    case dt_int32: case dt_uint32: case dt_float32: elem = 4; break;
    case dt_float64: elem = 8; break;
    default: fail(ErrorCode::parse, "unsupported NIfTI datatype " + std::to_string(type) + " in " + path.string());
  }
  require(offset >= kHeaderSize && buf.size() >= offset + n * elem, ErrorCode::parse,
          "truncated NIfTI data: " + path.string());

  std::vector<float> raw;
  const unsigned char* src = buf.data() + offset;
  switch (type) {
    case dt_uint8: decode<std::uint8_t>(src, n, swap, slope, inter, raw); break;
    case dt_int8: decode<std::int8_t>(src, n, swap, slope, inter, raw); break;
    case dt_int16: decode<std::int16_t>(src, n, swap, slope, inter, raw); break;
    case dt_uint16: decode<std::uint16_t>(src, n, swap, slope, inter, raw); break;
    case dt_int32: decode<std::int32_t>(src, n, swap, slope, inter, raw); break;
    case dt_uint32: decode<std::uint32_t>(src, n, swap, slope, inter, raw); break;
    case dt_float32: decode<float>(src, n, swap, slope, inter, raw); break;
    case dt_float64: decode<double>(src, n, swap, slope, inter, raw); break;
    default: break;
  }

  Affine affine{};
  if (h.get<std::int16_t>(254) > 0) {
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 4; ++col) affine[row * 4 + col] = h.get<float>(280 + 16 * row + 4 * col);
  } else if (h.get<std::int16_t>(252) > 0) {
    affine = affine_from_quaternion(h, pix);
  } else {
    affine = diagonal_affine(Spacing3{pix[0], pix[1], pix[2]});
  }
  return reorient(raw, dims, pix, affine);
}

Mask3D read_mask(const std::filesystem::path& path) {
  return to_binary_mask(read_volume(path), path.string());
}

void write_volume(const std::filesystem::path& path, const Volume3D& v) {
  write_raw(path, v.shape(), v.spacing(), v.affine(), dt_float32, 32, v.data().data(), v.size() * sizeof(float));
}

void write_mask(const std::filesystem::path& path, const Mask3D& m) {
  write_raw(path, m.shape(), m.spacing(), m.affine(), dt_uint8, 8, m.data().data(), m.size());
}

std::optional<std::filesystem::path> find_image(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace lacune::nifti
