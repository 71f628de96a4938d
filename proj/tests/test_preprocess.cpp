#include "doctest.h"

#include "iidm/numerics/rng.hpp"
#include "iidm/preprocess/preprocess.hpp"

#include <set>
#include <sstream>

using namespace iidm;

namespace {

SurveyPlaque plaque(std::string id, double v_ha, double area, std::vector<PixelIndex> px = {{0, 0}}) {
  return SurveyPlaque{std::move(id), v_ha, area, std::move(px)};
}

ForestMask checkerboard(int w, int h) {
  RasterGrid g(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g.at(0, y, x) = (x + y) % 2 ? 255.0f : 0.0f;
  return ForestMask(g);
}

RasterGrid random_raster(Rng& rng, int w, int h, int c) {
  RasterGrid g(w, h, c);
  for (auto& v : g.values) v = static_cast<float>(rng.uniform() * 10.0 - 3.0);
  return g;
}

}  // namespace

TEST_CASE("carbon_stock examples") {
  // 2.439 * 1.90 * 0.5 * 0.5 * 100 evaluated independently.
  const double expected = 2.439 * (1.90 * 0.5 * 0.5 * 100.0);
  CHECK(carbon_stock(plaque("a", 100, 1)) == doctest::Approx(115.8525).epsilon(1e-12));
  CHECK(carbon_stock(plaque("a", 100, 1)) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(carbon_stock(plaque("b", 0, 1)) == 0.0);
  CHECK(carbon_stock(plaque("c", 50, 2)) == doctest::Approx(115.8525).epsilon(1e-12));
  CHECK_THROWS_AS(carbon_stock(plaque("d", -1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(carbon_stock(plaque("e", 1, 0)), std::invalid_argument);
  CarbonCoefficients bad;
  bad.rho = 0;
  CHECK_THROWS_AS(carbon_stock(plaque("f", 1, 1), bad), std::invalid_argument);
}

TEST_CASE("carbon_stock is linear in volume and area separately") {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.uniform() * 300, a = 0.1 + rng.uniform() * 5, k = 0.1 + rng.uniform() * 4;
    const double base = carbon_stock(plaque("p", v, a));
    CHECK(carbon_stock(plaque("p", k * v, a)) == doctest::Approx(k * base).epsilon(1e-12));
    CHECK(carbon_stock(plaque("p", v, k * a)) == doctest::Approx(k * base).epsilon(1e-12));
  }
}

TEST_CASE("density_map examples") {
  CarbonCoefficients coeff;
  // Choose V so that C = 10 exactly under the default coefficients.
  const double v_for_10 = 10.0 / (coeff.expansion * coeff.delta * coeff.rho * coeff.gamma_c);

  SUBCASE("canopy-weighted split") {
    RasterGrid canopy(3, 1, 1, std::vector<float>{1, 1, 2});
    auto d = density_map({plaque("p", v_for_10, 1, {{0, 0}, {0, 1}, {0, 2}})}, canopy, coeff);
    CHECK(d.at(0, 0, 0) == doctest::Approx(2.5));
    CHECK(d.at(0, 0, 1) == doctest::Approx(2.5));
    CHECK(d.at(0, 0, 2) == doctest::Approx(5.0));
  }
  SUBCASE("uniform heights split evenly and other pixels are nodata") {
    RasterGrid canopy(4, 2, 1, 3.0f);
    auto d = density_map({plaque("p", v_for_10, 1, {{0, 0}, {0, 1}, {1, 0}, {1, 1}})}, canopy, coeff);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) CHECK(d.at(0, y, x) == doctest::Approx(2.5));
    CHECK(d.is_nodata(d.at(0, 0, 3)));
    CHECK(d.valid_count() == 4);
  }
  SUBCASE("all-zero heights fall back to uniform") {
    RasterGrid canopy(2, 1, 1, 0.0f);
    auto d = density_map({plaque("p", v_for_10, 1, {{0, 0}, {0, 1}})}, canopy, coeff);
    CHECK(d.at(0, 0, 0) == doctest::Approx(5.0));
    CHECK(d.at(0, 0, 1) == doctest::Approx(5.0));
  }
  SUBCASE("nodata canopy counts as zero height") {
    RasterGrid canopy(3, 1, 1, std::vector<float>{std::numeric_limits<float>::quiet_NaN(), 1, 3});
    auto d = density_map({plaque("p", v_for_10, 1, {{0, 0}, {0, 1}, {0, 2}})}, canopy, coeff);
    CHECK(d.at(0, 0, 0) == 0.0f);
    CHECK(d.at(0, 0, 1) == doctest::Approx(2.5));
    CHECK(d.at(0, 0, 2) == doctest::Approx(7.5));
  }
  SUBCASE("rejections") {
    RasterGrid canopy(2, 2, 1, 1.0f);
    CHECK_THROWS(density_map({plaque("a", 1, 1, {{0, 0}}), plaque("b", 1, 1, {{0, 0}})}, canopy));
    CHECK_THROWS(density_map({plaque("a", 1, 1, {{2, 0}})}, canopy));
    CHECK_THROWS(density_map({plaque("a", 1, 1, {})}, canopy));
    CHECK_THROWS(density_map({plaque("a", 1, 1)}, RasterGrid(2, 2, 2)));
  }
}

TEST_CASE("density_map conserves each plaque's carbon") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 12, h = 9;
    RasterGrid canopy(w, h, 1);
    for (auto& v : canopy.values) v = rng.uniform() < 0.2 ? 0.0f : static_cast<float>(rng.uniform() * 30);
    std::vector<int> cells(static_cast<std::size_t>(w * h));
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size() - 1; i > 0; --i)
      std::swap(cells[i], cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    std::vector<SurveyPlaque> plaques;
    std::size_t next = 0;
    const int count = static_cast<int>(rng.uniform_int(1, 6));
    for (int p = 0; p < count; ++p) {
      SurveyPlaque sp = plaque("p" + std::to_string(p), rng.uniform() * 400, 0.2 + rng.uniform() * 3, {});
      const auto n = static_cast<std::size_t>(rng.uniform_int(1, 12));
      for (std::size_t k = 0; k < n; ++k, ++next) sp.footprint.push_back({cells[next] / w, cells[next] % w});
      plaques.push_back(sp);
    }
    auto d = density_map(plaques, canopy);
    for (const auto& sp : plaques) {
      double total = 0;
      for (auto px : sp.footprint) total += d.at(0, px.row, px.col);
      const double c = carbon_stock(sp);
      CHECK(std::abs(total - c) <= 1e-4 * std::max(c, 1e-12));
    }
  }
}

TEST_CASE("apply_mask") {
  Rng rng(4);
  auto r = random_raster(rng, 6, 4, 2);
  SUBCASE("all forest is identity") {
    RasterGrid m(6, 4, 1, 255.0f);
    CHECK(apply_mask(r, ForestMask(m)).values == r.values);
  }
  SUBCASE("no forest is all nodata") {
    RasterGrid m(6, 4, 1, 0.0f);
    CHECK(apply_mask(r, ForestMask(m)).valid_count() == 0);
  }
  SUBCASE("checkerboard keeps exactly half") {
    auto out = apply_mask(r, checkerboard(6, 4));
    CHECK(out.valid_count() == r.values.size() / 2);
  }
  SUBCASE("idempotent") {
    auto m = checkerboard(6, 4);
    auto once = apply_mask(r, m), twice = apply_mask(once, m);
    REQUIRE(once.values.size() == twice.values.size());
    for (std::size_t i = 0; i < once.values.size(); ++i) {
      CHECK(once.is_nodata(once.values[i]) == twice.is_nodata(twice.values[i]));
      if (!once.is_nodata(once.values[i])) CHECK(once.values[i] == twice.values[i]);
    }
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(apply_mask(r, checkerboard(4, 4)), ShapeError);
    CHECK_THROWS_AS(ForestMask(RasterGrid(2, 2, 1, 1.0f)), std::invalid_argument);
    CHECK_THROWS_AS(ForestMask(RasterGrid(2, 2, 2, 0.0f)), ShapeError);
  }
}

TEST_CASE("tile examples") {
  SUBCASE("exact division") { CHECK(tile(RasterGrid(512, 512, 1), 256, 256).size() == 4); }
  SUBCASE("reflect-padded remainder") {
    RasterGrid r(300, 300, 1);
    for (int y = 0; y < 300; ++y)
      for (int x = 0; x < 300; ++x) r.at(0, y, x) = static_cast<float>(y * 1000 + x);
    auto tiles = tile(r, 256, 256);
    const int per_axis = (300 + 255) / 256;
    REQUIRE(tiles.size() == static_cast<std::size_t>(per_axis * per_axis));
    // Tile (0, 1) starts at column 256; column 300 mirrors column 298.
    CHECK(tiles[1].at(0, 0, 0) == r.at(0, 0, 256));
    CHECK(tiles[1].at(0, 0, 43) == r.at(0, 0, 299));
    CHECK(tiles[1].at(0, 0, 44) == r.at(0, 0, 298));
    CHECK(tiles[2].at(0, 44, 5) == r.at(0, 298, 5));
    CHECK(tiles[3].at(0, 255, 255) == r.at(0, 300 - 2 - (511 - 300), 300 - 2 - (511 - 300)));
  }
  SUBCASE("single tile is identity") {
    Rng rng(2);
    auto r = random_raster(rng, 256, 256, 3);
    auto tiles = tile(r, 256, 64);
    REQUIRE(tiles.size() == 1);
    CHECK(tiles[0].values == r.values);
  }
  SUBCASE("rejections") {
    RasterGrid r(16, 16, 1);
    CHECK_THROWS(tile(r, 0, 4));
    CHECK_THROWS(tile(r, 4, 0));
    CHECK_THROWS(tile(r, 32, 4));
  }
}

TEST_CASE("tiles cover every pixel when stride <= size") {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(4, 40)), h = static_cast<int>(rng.uniform_int(4, 40));
    const int size = static_cast<int>(rng.uniform_int(1, std::min(w, h)));
    const int stride = static_cast<int>(rng.uniform_int(1, size));
    RasterGrid r(w, h, 1);
    for (int i = 0; i < w * h; ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(i);
    std::set<int> seen;
    for (const auto& t : tile(r, size, stride))
      for (float v : t.values) seen.insert(static_cast<int>(v));
    CHECK(seen.size() == static_cast<std::size_t>(w * h));
  }
}

TEST_CASE("normalize") {
  SUBCASE("affine endpoints") {
    auto n = normalize(RasterGrid(3, 1, 1, std::vector<float>{2, 4, 6}));
    CHECK(n.raster.values == std::vector<float>{0.0f, 0.5f, 1.0f});
    CHECK(n.min == 2.0f);
    CHECK(n.max == 6.0f);
  }
  SUBCASE("constant maps to zero") {
    auto n = normalize(RasterGrid(4, 4, 1, 7.0f));
    for (float v : n.raster.values) CHECK(v == 0.0f);
  }
  SUBCASE("nodata stays nodata and is ignored") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    auto n = normalize(RasterGrid(3, 1, 1, std::vector<float>{nan, 1, 3}));
    CHECK(std::isnan(n.raster.values[0]));
    CHECK(n.raster.values[2] == 1.0f);
  }
  SUBCASE("all nodata rejected") {
    CHECK_THROWS(normalize(RasterGrid(2, 2, 1, std::numeric_limits<float>::quiet_NaN())));
  }
  SUBCASE("round trip") {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
      auto r = random_raster(rng, 9, 7, 2);
      auto n = normalize(r);
      auto back = denormalize(n.raster, n.min, n.max);
      for (std::size_t i = 0; i < r.values.size(); ++i) CHECK(std::abs(back.values[i] - r.values[i]) <= 1e-6f * 10);
      for (float v : n.raster.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("survey CSV parsing") {
  std::istringstream ok("id,v_ha,area_ha,pixels\nA,100,1.5,0:0;0:1\nB,20,2,3:4\n");
  auto plaques = parse_survey_csv(ok);
  REQUIRE(plaques.size() == 2);
  CHECK(plaques[0].id == "A");
  CHECK(plaques[0].v_ha == 100.0);
  CHECK(plaques[0].area_ha == 1.5);
  CHECK(plaques[0].footprint == std::vector<PixelIndex>{{0, 0}, {0, 1}});
  CHECK(plaques[1].footprint == std::vector<PixelIndex>{{3, 4}});

  for (const char* bad : {"id,v,area,pixels\n", "id,v_ha,area_ha,pixels\nA,x,1,0:0\n",
                          "id,v_ha,area_ha,pixels\nA,1,1,\n", "id,v_ha,area_ha,pixels\nA,1,1,0-0\n",
                          "id,v_ha,area_ha,pixels\nA,-1,1,0:0\n", "id,v_ha,area_ha,pixels\nA,1,1\n"}) {
    std::istringstream in(bad);
    CHECK_THROWS_AS(parse_survey_csv(in), std::invalid_argument);
  }
}
