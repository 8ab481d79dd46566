#include <cmath>
#include <limits>
#include <vector>

#include <omp.h>

#include "lacune/kernels.hpp"

namespace lacune::kernels {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) with a
// physical spacing weight; sites with infinite cost are skipped.
void edt_line(const double* f, std::size_t stride, double* out, std::size_t n, double w2,
              std::vector<long>& sites, std::vector<double>& bounds, std::vector<double>& line) {
  line.resize(n);
  for (std::size_t i = 0; i < n; ++i) line[i] = f[i * stride];

  sites.resize(n);
  bounds.resize(n + 1);
  long k = -1;
  for (long q = 0; q < static_cast<long>(n); ++q) {
    if (line[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      sites[0] = q;
      bounds[0] = -kInf;
      bounds[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const long v = sites[k];
      s = ((line[q] + w2 * q * q) - (line[v] + w2 * v * v)) / (2.0 * w2 * (q - v));
      if (s <= bounds[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= bounds[k]) {
      // k == 0 and the new parabola dominates everywhere.
      sites[0] = q;
      bounds[0] = -kInf;
      bounds[1] = kInf;
      continue;
    }
    ++k;
    sites[k] = q;
    bounds[k] = s;
    bounds[k + 1] = kInf;
  }

  if (k < 0) {
    for (std::size_t i = 0; i < n; ++i) out[i * stride] = kInf;
    return;
  }
  long j = 0;
  for (long q = 0; q < static_cast<long>(n); ++q) {
    while (bounds[j + 1] < q) ++j;
    const double d = static_cast<double>(q - sites[j]);
    out[q * stride] = w2 * d * d + line[sites[j]];
  }
}

}  // namespace

Grid3<double> squared_distance_transform(const Mask3D& m) {
  const Shape3 s = m.shape();
  const Spacing3 sp = m.spacing();
  Grid3<double> d(s, sp, kInf);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) d[i] = 0.0;

  const auto nx = static_cast<long>(s.nx), ny = static_cast<long>(s.ny), nz = static_cast<long>(s.nz);
  double* base = d.data().data();

#pragma omp parallel
  {
    std::vector<long> sites;
    std::vector<double> bounds, line;
#pragma omp for schedule(static)
    for (long z = 0; z < nz; ++z)
      for (long y = 0; y < ny; ++y) {
        double* p = base + (z * ny + y) * nx;
        edt_line(p, 1, p, s.nx, sp.x * sp.x, sites, bounds, line);
      }
#pragma omp for schedule(static)
    for (long z = 0; z < nz; ++z)
      for (long x = 0; x < nx; ++x) {
        double* p = base + z * ny * nx + x;
        edt_line(p, s.nx, p, s.ny, sp.y * sp.y, sites, bounds, line);
      }
#pragma omp for schedule(static)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        double* p = base + y * nx + x;
        edt_line(p, s.nx * s.ny, p, s.nz, sp.z * sp.z, sites, bounds, line);
      }
  }
  return d;
}

namespace parallel {

Moments moments(const Volume3D& v, bool foreground_only) {
  const Shape3 s = v.shape();
  const std::size_t plane = s.nx * s.ny;
  const auto nz = static_cast<long>(s.nz);
  std::vector<double> sums(s.nz, 0.0), sq(s.nz, 0.0);
  std::vector<std::size_t> counts(s.nz, 0);
  std::vector<float> mins(s.nz, std::numeric_limits<float>::max());
  std::vector<float> maxs(s.nz, std::numeric_limits<float>::lowest());
  const float* data = v.data().data();

#pragma omp parallel for schedule(static)
  for (long z = 0; z < nz; ++z) {
    const float* p = data + z * plane;
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (foreground_only && p[i] == 0.0f) continue;
      acc += p[i];
      ++n;
      mins[z] = std::min(mins[z], p[i]);
      maxs[z] = std::max(maxs[z], p[i]);
    }
    sums[z] = acc;
    counts[z] = n;
  }

  Moments m;
  double total = 0.0;
  for (long z = 0; z < nz; ++z) {
    total += sums[z];
    m.count += counts[z];
    if (counts[z] == 0) continue;
    m.min = m.count == counts[z] ? mins[z] : std::min(m.min, mins[z]);
    m.max = m.count == counts[z] ? maxs[z] : std::max(m.max, maxs[z]);
  }
  if (m.count == 0) return m;
  m.mean = total / static_cast<double>(m.count);

  const double mean = m.mean;
#pragma omp parallel for schedule(static)
  for (long z = 0; z < nz; ++z) {
    const float* p = data + z * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (foreground_only && p[i] == 0.0f) continue;
      const double dv = p[i] - mean;
      acc += dv * dv;
    }
    sq[z] = acc;
  }
  double ss = 0.0;
  for (long z = 0; z < nz; ++z) ss += sq[z];
  m.stddev = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

Mask3D dilate_mm(const Mask3D& m, double radius_mm) {
  const Grid3<double> d = squared_distance_transform(m);
  const double r2 = radius_mm * radius_mm;
  Mask3D out = m.like<std::uint8_t>();
  const auto n = static_cast<long>(m.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) out[i] = d[i] <= r2 ? 1 : 0;
  return out;
}

Mask3D inplane_border(const Mask3D& seg) {
  const Shape3 s = seg.shape();
  Mask3D out = seg.like<std::uint8_t>();
  const auto nx = static_cast<long>(s.nx), ny = static_cast<long>(s.ny), nz = static_cast<long>(s.nz);
  const std::uint8_t* in = seg.data().data();
  std::uint8_t* o = out.data().data();

#pragma omp parallel for schedule(static)
  for (long z = 0; z < nz; ++z) {
    const std::uint8_t* p = in + z * nx * ny;
    std::uint8_t* q = o + z * nx * ny;
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        if (!p[y * nx + x]) continue;
        const long y0 = std::max(0L, y - 1), y1 = std::min(ny - 1, y + 1);
        const long x0 = std::max(0L, x - 1), x1 = std::min(nx - 1, x + 1);
        for (long Y = y0; Y <= y1; ++Y)
          for (long X = x0; X <= x1; ++X) q[Y * nx + X] = 1;
      }
    for (long i = 0; i < nx * ny; ++i)
      if (p[i]) q[i] = 0;
  }
  return out;
}

void conv2d_forward(const ConvShape& s, std::span<const float> in, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> out) {
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  const long K = static_cast<long>(s.kernel), pad = K / 2;
  const long OC = static_cast<long>(s.out_channels);
  const std::size_t IC = s.in_channels;

  // Accumulation order per output pixel matches the serial kernel:
  // bias, then (ic, ky, kx) ascending, skipping out-of-bounds taps.
#pragma omp parallel for schedule(static) collapse(2)
  for (long oc = 0; oc < OC; ++oc)
    for (long y = 0; y < H; ++y) {
      float* row = out.data() + (oc * H + y) * W;
      for (long x = 0; x < W; ++x) row[x] = bias[oc];
      for (std::size_t ic = 0; ic < IC; ++ic)
        for (long ky = 0; ky < K; ++ky) {
          const long Y = y + ky - pad;
          if (Y < 0 || Y >= H) continue;
          const float* src = in.data() + (ic * H + Y) * W;
          for (long kx = 0; kx < K; ++kx) {
            const float w = weight[((oc * IC + ic) * K + ky) * K + kx];
            const long shift = kx - pad;
            const long x0 = std::max(0L, -shift), x1 = std::min(W, W - shift);
            for (long x = x0; x < x1; ++x) row[x] += w * src[x + shift];
          }
        }
    }
}

}  // namespace parallel
}  // namespace lacune::kernels
