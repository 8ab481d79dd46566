#pragma once

// Brute-force reference implementations. They share no code with the
// library beyond the data types, so agreement is meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "lacune/metrics.hpp"
#include "lacune/volume.hpp"

namespace oracle {

using namespace lacune;

/// out(v) = 1 iff some set voxel u has sum((v - u) * spacing)^2 <= r^2.
inline Mask3D dilate(const Mask3D& m, double r) {
  const Shape3 s = m.shape();
  const Spacing3 sp = m.spacing();
  std::vector<std::array<long, 3>> set;
  for (std::size_t z = 0; z < s.nz; ++z)
    for (std::size_t y = 0; y < s.ny; ++y)
      for (std::size_t x = 0; x < s.nx; ++x)
        if (m(x, y, z)) set.push_back({static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)});
  Mask3D out(s, sp, 0);
  const double r2 = r * r;
  for (std::size_t z = 0; z < s.nz; ++z)
    for (std::size_t y = 0; y < s.ny; ++y)
      for (std::size_t x = 0; x < s.nx; ++x)
        for (const auto& u : set) {
          const double dx = (static_cast<double>(x) - u[0]) * sp.x;
          const double dy = (static_cast<double>(y) - u[1]) * sp.y;
          const double dz = (static_cast<double>(z) - u[2]) * sp.z;
          if (dx * dx + dy * dy + dz * dz <= r2) {
            out(x, y, z) = 1;
            break;
          }
        }
  return out;
}

template <class Range>
std::set<std::size_t> support(const Range& data) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i]) s.insert(i);
  return s;
}

inline std::size_t intersection_size(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

inline std::size_t union_size(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

template <class Range>
double dice(const Range& a, const Range& b) {
  const auto sa = support(a), sb = support(b);
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(intersection_size(sa, sb)) / static_cast<double>(sa.size() + sb.size());
}

template <class Range>
double iou(const Range& a, const Range& b) {
  const auto sa = support(a), sb = support(b);
  if (sa.empty() && sb.empty()) return 1.0;
  return static_cast<double>(intersection_size(sa, sb)) / static_cast<double>(union_size(sa, sb));
}

/// Pixel enumeration of half-open boxes.
inline double box_iou(const Box& a, const Box& b) {
  std::set<std::pair<long, long>> pa, pb;
  for (long r = a.row_min; r < a.row_max; ++r)
    for (long c = a.col_min; c < a.col_max; ++c) pa.insert({r, c});
  for (long r = b.row_min; r < b.row_max; ++r)
    for (long c = b.col_min; c < b.col_max; ++c) pb.insert({r, c});
  std::size_t inter = 0;
  for (const auto& p : pa) inter += pb.count(p);
  const std::size_t uni = pa.size() + pb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double pair_iou(const ScoredInstance& d, const TruthInstance& t, IouKind kind) {
  return kind == IouKind::box ? box_iou(d.box, t.box) : iou(d.mask.data, t.mask.data);
}

inline bool class_member(double area, SizeClass c) {
  const double lo = 32.0 * 32.0, hi = 96.0 * 96.0;
  switch (c) {
    case SizeClass::small: return area < lo;
    case SizeClass::medium: return area >= lo && area <= hi;
    case SizeClass::large: return area > hi;
    case SizeClass::all: return true;
  }
  return false;
}

/// Detections visited by descending score (lower index first on ties), at
/// most max_dets; each takes the unmatched truth of highest IoU >= thr
/// (lower truth index on ties). Returns the truth index per detection or -1;
/// -2 marks detections beyond max_dets.
inline std::vector<long> greedy(const ImageInstances& im, double thr, IouKind kind, std::size_t max_dets) {
  const std::size_t n = im.detections.size();
  std::vector<long> out(n, -2);
  std::vector<bool> used(n, false), taken(im.truths.size(), false);
  for (std::size_t step = 0; step < std::min(n, max_dets); ++step) {
    std::size_t pick = n;
    for (std::size_t d = 0; d < n; ++d)
      if (!used[d] && (pick == n || im.detections[d].score > im.detections[pick].score)) pick = d;
    used[pick] = true;
    long best = -1;
    double best_v = 0.0;
    for (std::size_t t = 0; t < im.truths.size(); ++t) {
      if (taken[t]) continue;
      const double v = pair_iou(im.detections[pick], im.truths[t], kind);
      if (v >= thr && (best < 0 || v > best_v)) best = static_cast<long>(t), best_v = v;
    }
    if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
    out[pick] = best;
  }
  return out;
}

/// AP = (1 / n_truth) * sum over true positives, in pooled rank order, of
/// the maximum precision at that rank or later.
inline std::optional<double> ap(const std::vector<ImageInstances>& images, double thr, SizeClass c, IouKind kind,
                                std::size_t max_dets = 100) {
  std::size_t n_truth = 0;
  for (const auto& im : images)
    for (const auto& t : im.truths) n_truth += class_member(t.area, c);
  if (n_truth == 0) return std::nullopt;
  struct Entry {
    double score;
    std::size_t image, rank;
    bool tp;
  };
  std::vector<Entry> pooled;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto m = greedy(images[i], thr, kind, max_dets);
    std::vector<std::size_t> order;
    for (std::size_t d = 0; d < m.size(); ++d)
      if (m[d] != -2) order.push_back(d);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return images[i].detections[a].score > images[i].detections[b].score;
    });
    for (std::size_t k = 0; k < order.size(); ++k) {
      const long t = m[order[k]];
      if (t < 0) pooled.push_back({images[i].detections[order[k]].score, i, k, false});
      else if (class_member(images[i].truths[static_cast<std::size_t>(t)].area, c))
        pooled.push_back({images[i].detections[order[k]].score, i, k, true});
    }
  }
  std::sort(pooled.begin(), pooled.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });
  std::vector<double> prec(pooled.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    tp += pooled[k].tp;
    prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    if (!pooled[k].tp) continue;
    sum += *std::max_element(prec.begin() + static_cast<long>(k), prec.end());
  }
  return sum / static_cast<double>(n_truth);
}

inline std::optional<double> ar(const std::vector<ImageInstances>& images, const std::vector<double>& thrs,
                                SizeClass c, IouKind kind, std::size_t max_dets = 100) {
  std::size_t n_truth = 0;
  for (const auto& im : images)
    for (const auto& t : im.truths) n_truth += class_member(t.area, c);
  if (n_truth == 0) return std::nullopt;
  double total = 0.0;
  for (double thr : thrs) {
    std::size_t hit = 0;
    for (const auto& im : images)
      for (long t : greedy(im, thr, kind, max_dets))
        if (t >= 0 && class_member(im.truths[static_cast<std::size_t>(t)].area, c)) ++hit;
    total += static_cast<double>(hit) / static_cast<double>(n_truth);
  }
  return total / static_cast<double>(thrs.size());
}

/// Exhaustive evaluation of every grid threshold, returning (best t, Dice).
inline std::pair<double, double> best_threshold(const std::vector<PlaneF>& probs, const std::vector<PlaneU8>& truths) {
  double best_t = -1.0, best = -1.0;
  for (int k = 1; k <= 19; ++k) {
    const double t = k / 20.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      std::vector<std::uint8_t> pred(probs[i].data.size());
      for (std::size_t j = 0; j < pred.size(); ++j) pred[j] = probs[i].data[j] >= static_cast<float>(t);
      sum += dice(pred, truths[i].data);
    }
    const double mean = sum / static_cast<double>(probs.size());
    if (mean > best) best = mean, best_t = t;
  }
  return {best_t, best};
}

/// Violations of the in-plane border contract (0 when it holds).
inline std::size_t border_violations(const Mask3D& seg, const Mask3D& border) {
  const Shape3 s = seg.shape();
  std::size_t bad = 0;
  const auto at = [&](const Mask3D& m, long x, long y, std::size_t z) {
    return x >= 0 && y >= 0 && x < static_cast<long>(s.nx) && y < static_cast<long>(s.ny) &&
           m(static_cast<std::size_t>(x), static_cast<std::size_t>(y), z);
  };
  for (std::size_t z = 0; z < s.nz; ++z)
    for (long y = 0; y < static_cast<long>(s.ny); ++y)
      for (long x = 0; x < static_cast<long>(s.nx); ++x) {
        const bool b = at(border, x, y, z), g = at(seg, x, y, z);
        bool seg_nb = false, border_nb = false, bg_nb = false;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            if (!dx && !dy) continue;
            seg_nb = seg_nb || at(seg, x + dx, y + dy, z);
            border_nb = border_nb || at(border, x + dx, y + dy, z);
            const bool inside = x + dx >= 0 && y + dy >= 0 && x + dx < static_cast<long>(s.nx) &&
                                y + dy < static_cast<long>(s.ny);
            bg_nb = bg_nb || (inside && !at(seg, x + dx, y + dy, z));
          }
        if (b && g) ++bad;               // disjoint
        if (b && !seg_nb) ++bad;         // every border voxel touches seg
        if (g && bg_nb && !border_nb) ++bad;  // every in-plane boundary voxel touches border
      }
  return bad;
}

inline Mask3D random_mask(std::mt19937_64& rng, Shape3 s, Spacing3 sp, double density) {
  Mask3D m(s, sp, 0);
  std::bernoulli_distribution on(density);
  for (auto& v : m.data()) v = on(rng) ? 1 : 0;
  return m;
}

}  // namespace oracle
