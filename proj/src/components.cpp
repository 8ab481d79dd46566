#include "lacune/components.hpp"

#include <cstdlib>
#include <deque>

namespace lacune {

Labeling3D label_components(const Mask3D& m, Connectivity3D conn) {
  Labeling3D out;
  out.labels = m.like<std::int32_t>();
  const Shape3 s = m.shape();
  const auto nx = static_cast<long>(s.nx), ny = static_cast<long>(s.ny), nz = static_cast<long>(s.nz);

  struct Step { long dx, dy, dz; };
  std::vector<Step> steps;
  for (long dz = -1; dz <= 1; ++dz)
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (conn == Connectivity3D::face6 && manhattan != 1) continue;
        steps.push_back({dx, dy, dz});
      }

  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i] || out.labels[i]) continue;
    const std::int32_t label = ++out.count;
    out.labels[i] = label;
    queue.push_back(i);
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      const long x = static_cast<long>(v % s.nx), y = static_cast<long>((v / s.nx) % s.ny),
                 z = static_cast<long>(v / (s.nx * s.ny));
      for (const auto& st : steps) {
        const long X = x + st.dx, Y = y + st.dy, Z = z + st.dz;
        if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz) continue;
        const std::size_t u = m.index(X, Y, Z);
        if (m[u] && !out.labels[u]) {
          out.labels[u] = label;
          queue.push_back(u);
        }
      }
    }
  }
  return out;
}

Labeling2D label_components(const PlaneU8& p, Connectivity2D conn) {
  Labeling2D out;
  out.labels = Plane<std::int32_t>(p.rows, p.cols, 0);
  const auto rows = static_cast<long>(p.rows), cols = static_cast<long>(p.cols);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    if (!p.data[i] || out.labels.data[i]) continue;
    const std::int32_t label = ++out.count;
    out.labels.data[i] = label;
    queue.push_back(i);
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      const long r = static_cast<long>(v / p.cols), c = static_cast<long>(v % p.cols);
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (conn == Connectivity2D::four && dr != 0 && dc != 0) continue;
          const long R = r + dr, C = c + dc;
          if (R < 0 || C < 0 || R >= rows || C >= cols) continue;
          const std::size_t u = static_cast<std::size_t>(R * cols + C);
          if (p.data[u] && !out.labels.data[u]) {
            out.labels.data[u] = label;
            queue.push_back(u);
          }
        }
    }
  }
  return out;
}

namespace {

template <class Grid>
std::vector<std::vector<std::size_t>> gather(const Grid& labels, std::int32_t count) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 0) out[static_cast<std::size_t>(labels[i] - 1)].push_back(i);
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> component_voxels(const Labeling3D& l) { return gather(l.labels, l.count); }
std::vector<std::vector<std::size_t>> component_pixels(const Labeling2D& l) { return gather(l.labels.data, l.count); }

PlaneU8 fill_holes(const PlaneU8& p) {
  // Flood the background from the border; whatever background is left is a hole.
  PlaneU8 outside(p.rows, p.cols, 0);
  const auto rows = static_cast<long>(p.rows), cols = static_cast<long>(p.cols);
  std::deque<std::size_t> queue;
  const auto seed = [&](long r, long c) {
    const std::size_t i = static_cast<std::size_t>(r * cols + c);
    if (!p.data[i] && !outside.data[i]) {
      outside.data[i] = 1;
      queue.push_back(i);
    }
  };
  for (long r = 0; r < rows; ++r) {
    seed(r, 0);
    seed(r, cols - 1);
  }
  for (long c = 0; c < cols; ++c) {
    seed(0, c);
    seed(rows - 1, c);
  }
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    const long r = static_cast<long>(v) / cols, c = static_cast<long>(v) % cols;
    if (r > 0) seed(r - 1, c);
    if (r + 1 < rows) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < cols) seed(r, c + 1);
  }
  PlaneU8 out = p;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = outside.data[i] ? 0 : 1;
  return out;
}

}  // namespace lacune
