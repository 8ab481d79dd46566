#include <cmath>
#include <limits>
#include <vector>

#include "lacune/kernels.hpp"

namespace lacune::kernels::serial {

Moments moments(const Volume3D& v, bool foreground_only) {
  Moments m;
  double sum = 0.0;
  bool first = true;
  for (float x : v.data()) {
    if (foreground_only && x == 0.0f) continue;
    sum += x;
    ++m.count;
    if (first || x < m.min) m.min = x;
    if (first || x > m.max) m.max = x;
    first = false;
  }
  if (m.count == 0) return m;
  m.mean = sum / static_cast<double>(m.count);
  double ss = 0.0;
  for (float x : v.data()) {
    if (foreground_only && x == 0.0f) continue;
    const double d = x - m.mean;
    ss += d * d;
  }
  m.stddev = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

Mask3D dilate_mm(const Mask3D& m, double radius_mm) {
  const Shape3 s = m.shape();
  const Spacing3 sp = m.spacing();
  const double r2 = radius_mm * radius_mm;
  const auto rx = static_cast<long>(std::floor(radius_mm / sp.x));
  const auto ry = static_cast<long>(std::floor(radius_mm / sp.y));
  const auto rz = static_cast<long>(std::floor(radius_mm / sp.z));

  struct Offset { long dx, dy, dz; };
  std::vector<Offset> ball;
  for (long dz = -rz; dz <= rz; ++dz)
    for (long dy = -ry; dy <= ry; ++dy)
      for (long dx = -rx; dx <= rx; ++dx) {
        const double d2 = dx * dx * sp.x * sp.x + dy * dy * sp.y * sp.y + dz * dz * sp.z * sp.z;
        if (d2 <= r2) ball.push_back({dx, dy, dz});
      }

  Mask3D out = m.like<std::uint8_t>();
  const auto nx = static_cast<long>(s.nx), ny = static_cast<long>(s.ny), nz = static_cast<long>(s.nz);
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        if (!m(x, y, z)) continue;
        for (const auto& o : ball) {
          const long X = x + o.dx, Y = y + o.dy, Z = z + o.dz;
          if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz) continue;
          out(X, Y, Z) = 1;
        }
      }
  return out;
}

Mask3D inplane_border(const Mask3D& seg) {
  const Shape3 s = seg.shape();
  Mask3D out = seg.like<std::uint8_t>();
  const auto nx = static_cast<long>(s.nx), ny = static_cast<long>(s.ny);
  for (std::size_t z = 0; z < s.nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        if (seg(x, y, z)) continue;
        bool near = false;
        for (long dy = -1; dy <= 1 && !near; ++dy)
          for (long dx = -1; dx <= 1 && !near; ++dx) {
            const long X = x + dx, Y = y + dy;
            if (X < 0 || Y < 0 || X >= nx || Y >= ny) continue;
            near = seg(X, Y, z) != 0;
          }
        out(x, y, z) = near ? 1 : 0;
      }
  return out;
}

void conv2d_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> out) {
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  const long K = static_cast<long>(s.kernel), pad = K / 2;
  for (std::size_t oc = 0; oc < s.out_channels; ++oc)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        float acc = bias[oc];
        for (std::size_t ic = 0; ic < s.in_channels; ++ic)
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const long Y = y + ky - pad, X = x + kx - pad;
              if (Y < 0 || X < 0 || Y >= H || X >= W) continue;
              acc += weight[((oc * s.in_channels + ic) * K + ky) * K + kx] * in[(ic * H + Y) * W + X];
            }
        out[(oc * H + y) * W + x] = acc;
      }
}

}  // namespace lacune::kernels::serial
