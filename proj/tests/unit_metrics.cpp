#include "test_util.hpp"

#include "lacune/metrics.hpp"
#include "oracles.hpp"

using namespace lacune;

namespace {

PlaneU8 paint(const Box& b, std::size_t n = 64) {
  PlaneU8 m(n, n);
  for (long r = b.row_min; r < b.row_max; ++r)
    for (long c = b.col_min; c < b.col_max; ++c) m(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1;
  return m;
}

TruthInstance truth(Box b, double area = 100.0) { return {b, paint(b), area}; }
ScoredInstance det(Box b, double score) { return {b, paint(b), score}; }

// Two truths, three detections: a perfect hit, a miss, and a partial hit of
// IoU 0.8.
std::vector<ImageInstances> two_truth_case() {
  ImageInstances im;
  im.truths = {truth({0, 0, 10, 10}), truth({20, 20, 30, 30})};
  im.detections = {det({0, 0, 10, 10}, 0.9), det({40, 40, 50, 50}, 0.8), det({20, 20, 30, 28}, 0.7)};
  return {im};
}

}  // namespace

TEST_CASE("dice and iou on small sets") {
  Mask3D a({8, 1, 1}, {1, 1, 1}), b = a;
  for (std::size_t x : {0u, 1u, 2u, 3u}) a[x] = 1;
  CHECK(dice(a, a) == 1.0);
  for (std::size_t x : {4u, 5u}) b[x] = 1;
  CHECK(dice(a, b) == 0.0);
  CHECK(iou(a, b) == 0.0);
  b = a.like<std::uint8_t>();
  for (std::size_t x : {2u, 3u, 4u, 5u}) b[x] = 1;
  CHECK(dice(a, b) == 0.5);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  const Mask3D empty = a.like<std::uint8_t>();
  CHECK(dice(empty, empty) == 1.0);
  CHECK(iou(empty, empty) == 1.0);
}

TEST_CASE("box iou uses half-open pixels") {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0));
  CHECK(iou(a, b) == oracle::box_iou(a, b));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(bounding_box(paint({3, 4, 7, 9})) == Box{3, 4, 7, 9});
  CHECK_FALSE(bounding_box(PlaneU8(4, 4)).valid());
}

TEST_CASE("size classes") {
  CHECK(size_class_of(1023) == SizeClass::small);
  CHECK(size_class_of(1024) == SizeClass::medium);
  CHECK(size_class_of(9216) == SizeClass::medium);
  CHECK(size_class_of(9217) == SizeClass::large);
}

TEST_CASE("average precision simple cases") {
  ImageInstances one;
  one.truths = {truth({0, 0, 5, 5})};
  one.detections = {det({0, 0, 5, 5}, 0.9)};
  CHECK(*average_precision({one}, 0.5, SizeClass::all) == 1.0);
  CHECK(*average_recall({one}, coco_iou_thresholds(), SizeClass::all) == 1.0);
  ImageInstances none;
  none.truths = one.truths;
  CHECK(*average_precision({none}, 0.5, SizeClass::all) == 0.0);
  CHECK(*average_recall({none}, coco_iou_thresholds(), SizeClass::all) == 0.0);
  CHECK_FALSE(average_precision({one}, 0.5, SizeClass::large).has_value());
  CHECK_FALSE(average_recall({one}, coco_iou_thresholds(), SizeClass::large).has_value());
}

TEST_CASE("average precision on the constructed two-truth case") {
  const auto images = two_truth_case();
  // Ranks: TP, FP, TP -> precisions 1, 1/2, 2/3 -> (1 + 2/3) / 2.
  CHECK(*average_precision(images, 0.5, SizeClass::all) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(*average_precision(images, 0.85, SizeClass::all) == doctest::Approx(0.5).epsilon(1e-12));
  // The partial hit survives thresholds 0.50 .. 0.80 (7 of 10).
  CHECK(*average_recall(images, coco_iou_thresholds(), SizeClass::all) == doctest::Approx(0.85).epsilon(1e-12));
  for (double t : {0.5, 0.85})
    for (IouKind k : {IouKind::box, IouKind::mask})
      CHECK(std::abs(*average_precision(images, t, SizeClass::all, k) - *oracle::ap(images, t, SizeClass::all, k)) < 1e-12);
  CHECK(std::abs(*average_recall(images, coco_iou_thresholds(), SizeClass::all) -
                 *oracle::ar(images, coco_iou_thresholds(), SizeClass::all, IouKind::box)) < 1e-12);
}

TEST_CASE("greedy matching respects score order and max detections") {
  ImageInstances im;
  im.truths = {truth({0, 0, 10, 10})};
  im.detections = {det({0, 0, 10, 9}, 0.6), det({0, 0, 10, 10}, 0.9)};
  const auto m = greedy_match(im, 0.5, IouKind::box);
  CHECK(m == std::vector<long>{-1, 0});
  CHECK(m == oracle::greedy(im, 0.5, IouKind::box, 100));
  const auto capped = greedy_match(im, 0.5, IouKind::box, 1);
  CHECK(capped[1] == 0);
  CHECK(*average_precision({im}, 0.5, SizeClass::all, IouKind::box, 1) == 1.0);
}

TEST_CASE("out-of-class matches are ignored, unmatched detections count everywhere") {
  ImageInstances im;
  im.truths = {truth({0, 0, 10, 10}, 100.0), truth({20, 20, 30, 30}, 5000.0)};
  im.detections = {det({20, 20, 30, 30}, 0.9), det({0, 0, 10, 10}, 0.8), det({50, 50, 52, 52}, 0.95)};
  // small: FP (0.95), ignored (0.9), TP (0.8) -> precision 1/2 at the TP.
  CHECK(*average_precision({im}, 0.5, SizeClass::small) == doctest::Approx(0.5));
  CHECK(*average_precision({im}, 0.5, SizeClass::medium) == doctest::Approx(0.5));
  CHECK(*average_precision({im}, 0.5, SizeClass::small) == *oracle::ap({im}, 0.5, SizeClass::small, IouKind::box));
}

TEST_CASE("lesion-wise counts") {
  Mask3D t({12, 3, 3}, {1, 1, 1});
  t(1, 1, 1) = t(5, 1, 1) = t(9, 1, 1) = 1;
  CHECK(lesionwise_counts(t, t) == LesionCounts{3, 0, 0});
  CHECK(lesionwise_counts(t.like<std::uint8_t>(), t) == LesionCounts{0, 0, 3});
  Mask3D two({8, 3, 3}, {1, 1, 1});
  two(1, 1, 1) = two(5, 1, 1) = 1;
  Mask3D bridge = two.like<std::uint8_t>();
  for (std::size_t x = 1; x <= 5; ++x) bridge(x, 1, 1) = 1;
  CHECK(lesionwise_counts(bridge, two) == LesionCounts{2, 0, 0});
  Mask3D extra = two;
  extra(3, 1, 1) = 1;  // two voxels from each truth: its own component
  CHECK(lesionwise_counts(extra, two) == LesionCounts{2, 1, 0});
}

TEST_CASE("case evaluation conventions") {
  Mask3D empty({16, 16, 2}, {1, 1, 1});
  const CaseMetrics e = evaluate_case("c", empty, empty);
  CHECK(e.empty_pair);
  CHECK(e.dice == 1.0);
  Mask3D t = empty;
  for (std::size_t x = 2; x < 6; ++x)
    for (std::size_t y = 2; y < 6; ++y) t(x, y, 1) = 1;
  const CaseMetrics p = evaluate_case("c", t, t);
  CHECK(p.dice == 1.0);
  CHECK(*p.ap50_by_size.at(SizeClass::all) == 1.0);
  CHECK(*p.ap50_by_size.at(SizeClass::small) == 1.0);  // 16 voxels * 16 = 256 < 1024
  CHECK_FALSE(p.ap50_by_size.at(SizeClass::large).has_value());
}
