#include "test_util.hpp"

#include "lacune/patch.hpp"

using namespace lacune;

namespace {

std::vector<std::size_t> unique_rows(const PatchGrid& g) {
  std::vector<std::size_t> r;
  for (const auto& o : g.origins)
    if (std::find(r.begin(), r.end(), o.row) == r.end()) r.push_back(o.row);
  return r;
}

PlaneF random_plane(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  PlaneF p(rows, cols);
  for (float& v : p.data) v = u(rng);
  return p;
}

Patch2D single_channel(const PlaneF& p) {
  Patch2D out;
  out.size = p.rows;
  out.channels = {p, p, p};
  return out;
}

}  // namespace

TEST_CASE("grid origins") {
  const PatchGrid a = compute_grid(96, 96, 64, 0.5);
  CHECK(unique_rows(a) == std::vector<std::size_t>{0, 32});
  CHECK(a.origins.size() == 4);
  const PatchGrid b = compute_grid(100, 100, 64, 0.5);
  CHECK(unique_rows(b) == std::vector<std::size_t>{0, 32, 36});
  const PatchGrid c = compute_grid(64, 64, 64, 0.5);
  REQUIRE(c.origins.size() == 1);
  CHECK(c.origins[0] == PixelOrigin{0, 0});
}

TEST_CASE("extracted patches equal naive sub-arrays") {
  PlaneF board(80, 72);
  for (std::size_t r = 0; r < board.rows; ++r)
    for (std::size_t c = 0; c < board.cols; ++c) board(r, c) = static_cast<float>((r + c) % 2 + r * 1000 + c);
  const PatchGrid g = compute_grid(80, 72, 32, 0.5);
  const auto patches = extract_patches(std::vector<PlaneF>{board}, 0, g);
  REQUIRE(patches.size() == g.origins.size());
  std::vector<std::uint8_t> covered(board.data.size(), 0);
  for (const auto& p : patches)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        CHECK(p.channels[0](r, c) == board(p.origin.row + r, p.origin.col + c));
        covered[(p.origin.row + r) * board.cols + p.origin.col + c] = 1;
      }
  CHECK(std::count(covered.begin(), covered.end(), 0) == 0);

  const PatchGrid one = compute_grid(32, 32, 32, 0.5);
  PlaneF small(32, 32, 2.5f);
  CHECK(extract_patches(std::vector<PlaneF>{small}, 0, one)[0].channels[0] == small);
}

TEST_CASE("nearest-neighbour up and down sampling") {
  PlaneF p(2, 2);
  p.data = {1, 2, 3, 4};
  const Patch2D up = upsample_nn(single_channel(p), 4);
  REQUIRE(up.size == 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(up.channels[0](r, c) == p(r / 4, c / 4));
  CHECK(downsample_nn(up, 4).channels[0] == p);
  CHECK(upsample_nn(single_channel(p), 1).channels[0] == p);
  CHECK(downsample_nn(single_channel(p), 1).channels[0] == p);
}

TEST_CASE("256 detector mask downsamples to 64 with every set pixel traced to a set input") {
  std::mt19937_64 rng(21);
  std::bernoulli_distribution on(0.3);
  PlaneU8 m(256, 256);
  for (auto& v : m.data) v = on(rng);
  const PlaneU8 d = downsample_mask_nn(m, 4);
  REQUIRE(d.rows == 64);
  REQUIRE(d.cols == 64);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) CHECK(d(r, c) == m(4 * r, 4 * c));
}

TEST_CASE("reconstruct fuses overlaps by mean or max") {
  const PatchGrid g = compute_grid(4, 6, 4, 0.5);  // col origins 0, 2
  REQUIRE(g.origins.size() == 2);
  Patch2D a, b;
  a.origin = g.origins[0], b.origin = g.origins[1];
  a.size = b.size = 4;
  a.channels = {PlaneF(4, 4, 0.0f)};
  b.channels = {PlaneF(4, 4, 1.0f)};
  const PlaneF mx = reconstruct({a, b}, g, Fusion::max);
  const PlaneF mean = reconstruct({a, b}, g, Fusion::mean);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(mx(r, 2) == 1.0f);
    CHECK(mx(r, 3) == 1.0f);
    CHECK(mean(r, 2) == 0.5f);
    CHECK(mean(r, 0) == 0.0f);
    CHECK(mean(r, 5) == 1.0f);
  }
}

TEST_CASE("extract then reconstruct is the identity") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 10; ++i) {
    const PlaneF p = random_plane(rng, 64 + 7 * i, 100 - 3 * i);
    for (std::size_t size : {64u, 32u}) {
      const PatchGrid g = compute_grid(p.rows, p.cols, size, 0.5);
      CHECK(reconstruct(extract_patches(std::vector<PlaneF>{p}, 0, g), g, Fusion::mean) == p);
    }
  }
}

TEST_CASE("centered origin clamps to the plane") {
  CHECK(centered_origin(0, 0, 32, 100, 100) == PixelOrigin{0, 0});
  CHECK(centered_origin(99, 99, 32, 100, 100) == PixelOrigin{68, 68});
  const PixelOrigin mid = centered_origin(50, 50, 32, 100, 100);
  CHECK(mid.row <= 50);
  CHECK(mid.row + 32 > 50);
}
