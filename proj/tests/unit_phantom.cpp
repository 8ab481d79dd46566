#include "test_util.hpp"

#include <json.hpp>

#include "lacune/components.hpp"
#include "lacune/phantom.hpp"

using namespace lacune;
using testutil::error_code_of;

namespace {
PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.shape = {96, 96, 48};
  s.seed = seed;
  return s;
}
}  // namespace

TEST_CASE("empty phantom is a valid case") {
  PhantomSpec s = small_spec(1);
  s.n_lacunes = 0;
  s.n_decoys_outside_region = 0;
  const Phantom p = generate_phantom(s);
  REQUIRE(p.image.truth.has_value());
  CHECK(count_nonzero(*p.image.truth) == 0);
  CHECK(count_nonzero(p.decoys) == 0);
  CHECK_NOTHROW(validate_case(p.image));
}

TEST_CASE("planted lacunes are separate, in range and inside the region") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Phantom p = generate_phantom(small_spec(seed));
    const Labeling3D l = label_components(*p.image.truth);
    CHECK(l.count == 3);
    for (const auto& comp : component_voxels(l)) {
      const double d = equivalent_diameter(comp.size(), p.image.spacing());
      CHECK(d >= 3.0 - 1e-9);
      CHECK(d <= 15.0 + 1e-9);
      // Centres lie in the region, so every lacune touches it.
      std::size_t inside = 0;
      for (std::size_t v : comp) inside += p.region[v];
      CHECK(inside > 0);
    }
    const Labeling3D dl = label_components(p.decoys);
    CHECK(dl.count == 2);
    for (std::size_t v = 0; v < p.decoys.size(); ++v)
      if (p.decoys[v]) CHECK(p.region[v] == 0);
    REQUIRE(p.lesions.size() == 5);
    for (const auto& les : p.lesions)
      if (!les.decoy) CHECK(p.region(les.center[0], les.center[1], les.center[2]) == 1);
  }
}

TEST_CASE("phantoms are deterministic per seed") {
  const Phantom a = generate_phantom(small_spec(9)), b = generate_phantom(small_spec(9));
  CHECK(a.image.t1 == b.image.t1);
  CHECK(a.image.t2 == b.image.t2);
  CHECK(a.image.flair == b.image.flair);
  CHECK(*a.image.truth == *b.image.truth);
  const Phantom c = generate_phantom(small_spec(10));
  CHECK_FALSE(c.image.t1 == a.image.t1);
}

TEST_CASE("equivalent diameter") {
  // A sphere of 4/3 pi r^3 mm^3 has diameter 2r.
  CHECK(equivalent_diameter(113, {1, 1, 1}) == doctest::Approx(2.0 * std::cbrt(3.0 * 113 / (4.0 * M_PI))));
  CHECK(equivalent_diameter(1, {2, 2, 2}) == doctest::Approx(2.0 * std::cbrt(6.0 / M_PI)));
}

TEST_CASE("spec validation and JSON") {
  PhantomSpec s = small_spec(3);
  s.diameter_range_mm = {1.0, 20.0};
  CHECK(error_code_of([&] { validate(s); }) == ErrorCode::config);
  s.allow_any_diameter = true;
  CHECK_NOTHROW(validate(s));
  nlohmann::json j = small_spec(3);
  const PhantomSpec back = j.get<PhantomSpec>();
  CHECK(back.shape == Shape3{96, 96, 48});
  CHECK(back.seed == 3);
  j["bogus"] = 1;
  CHECK(error_code_of([&] { (void)j.get<PhantomSpec>(); }) == ErrorCode::config);
}
