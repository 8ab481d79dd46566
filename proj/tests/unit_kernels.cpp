#include "test_util.hpp"

#include "lacune/kernels.hpp"
#include "oracles.hpp"

using namespace lacune;
namespace ks = lacune::kernels::serial;
namespace kp = lacune::kernels::parallel;

TEST_CASE("parallel dilation equals the serial stamp and the oracle") {
  std::mt19937_64 rng(41);
  for (const Spacing3 sp : {Spacing3{1, 1, 1}, Spacing3{1, 1, 2}, Spacing3{0.7, 1.3, 2.5}})
    for (double r : {0.9, 1.0, 2.0, 3.5}) {
      const Mask3D m = oracle::random_mask(rng, {15, 13, 9}, sp, 0.01);
      const Mask3D p = kp::dilate_mm(m, r);
      CHECK(p == ks::dilate_mm(m, r));
      CHECK(p == oracle::dilate(m, r));
    }
}

TEST_CASE("distance transform of a single voxel") {
  Mask3D m({5, 5, 3}, {1, 2, 3});
  m(2, 2, 1) = 1;
  const auto d = kernels::squared_distance_transform(m);
  CHECK(d(2, 2, 1) == 0.0);
  CHECK(d(4, 3, 2) == 4.0 + 4.0 + 9.0);
  CHECK(std::isinf(kernels::squared_distance_transform(m.like<std::uint8_t>())(0, 0, 0)));
}

TEST_CASE("border kernels agree") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 10; ++i) {
    const Mask3D m = oracle::random_mask(rng, {11, 7, 4}, {1, 1, 1}, 0.1 * i);
    CHECK(kp::inplane_border(m) == ks::inplane_border(m));
  }
}

TEST_CASE("moments agree to rounding") {
  std::mt19937_64 rng(43);
  Volume3D v = testutil::noise_volume(rng, {31, 17, 11});
  for (std::size_t i = 0; i < v.size(); i += 5) v[i] = 0.0f;
  for (bool fg : {false, true}) {
    const auto a = ks::moments(v, fg), b = kp::moments(v, fg);
    CHECK(a.count == b.count);
    CHECK(a.min == b.min);
    CHECK(a.max == b.max);
    CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
    CHECK(a.stddev == doctest::Approx(b.stddev).epsilon(1e-10));
  }
  CHECK(ks::moments(v, true).count == v.size() - (v.size() + 4) / 5);
}

TEST_CASE("convolution kernels agree bit for bit") {
  std::mt19937_64 rng(44);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (std::size_t k : {1u, 3u}) {
    const kernels::ConvShape s{5, 7, 13, 9, k};
    std::vector<float> in(s.in_channels * s.height * s.width), w(s.out_channels * s.in_channels * k * k),
        b(s.out_channels), o1(s.out_channels * s.height * s.width), o2(o1.size());
    for (auto* v : {&in, &w, &b})
      for (float& x : *v) x = n(rng);
    ks::conv2d_forward(s, in, w, b, o1);
    kp::conv2d_forward(s, in, w, b, o2);
    CHECK(o1 == o2);
  }
  // 1x1 identity weights reproduce the input.
  const kernels::ConvShape s{1, 1, 3, 3, 1};
  std::vector<float> in = {1, 2, 3, 4, 5, 6, 7, 8, 9}, w = {1}, b = {0}, out(9);
  kp::conv2d_forward(s, in, w, b, out);
  CHECK(out == in);
}
