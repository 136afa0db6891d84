#include <catch2/catch_amalgamated.hpp>

#include "crimemap/geo.hpp"
#include "oracles.hpp"

using namespace crimemap;
using Catch::Approx;

TEST_CASE("latlon_to_world maps the origin to the center of the unit square") {
  auto p = latlon_to_world(0.0, 0.0);
  CHECK(p.x == Approx(0.5).margin(1e-15));
  CHECK(p.y == Approx(0.5).margin(1e-15));
}

TEST_CASE("latlon_to_world maps the date line to x = 1") {
  auto p = latlon_to_world(0.0, 180.0);
  CHECK(p.x == Approx(1.0).margin(1e-15));
  CHECK(p.y == Approx(0.5).margin(1e-15));
}

TEST_CASE("latlon_to_world matches a high-precision reference at Chicago") {
  auto p = latlon_to_world(41.8781, -87.6298);
  // Frozen from an extended-precision evaluation of the standard formula.
  CHECK(p.x == Approx(0.256583888888889).margin(1e-12));
  CHECK(p.y == Approx(0.371672246338859).margin(1e-12));
  auto [rx, ry] = oracles::ref_world(41.8781L, -87.6298L);
  CHECK(p.x == Approx(static_cast<double>(rx)).margin(1e-12));
  CHECK(p.y == Approx(static_cast<double>(ry)).margin(1e-12));
}

TEST_CASE("latlon_to_world rejects latitudes beyond the Mercator limit") {
  CHECK_THROWS_AS(latlon_to_world(86.0, 0.0), RangeError);
  CHECK_THROWS_AS(latlon_to_world(-89.0, 0.0), RangeError);
}

TEST_CASE("projection round trip is exact to 1e-12 world units") {
  Rng rng = make_rng(42);
  for (int i = 0; i < 1000; ++i) {
    double lat = -85.0 + 170.0 * rand_unit(rng);
    double lon = -180.0 + 360.0 * rand_unit(rng);
    auto w = latlon_to_world(lat, lon);
    auto [lat2, lon2] = world_to_latlon(w);
    auto w2 = latlon_to_world(lat2, lon2);
    CHECK(std::abs(w2.x - w.x) < 1e-12);
    CHECK(std::abs(w2.y - w.y) < 1e-12);
    CHECK(lat2 == Approx(lat).margin(1e-9));
    CHECK(lon2 == Approx(lon).margin(1e-9));
  }
}

TEST_CASE("ground_resolution at the equator") {
  CHECK(ground_resolution(0.0, 0) == Approx(156543.03).margin(0.01));
  CHECK(ground_resolution(0.0, 17) == Approx(1.1943).margin(1e-3));
}

TEST_CASE("ground_resolution halves at 60 degrees latitude") {
  CHECK(ground_resolution(60.0, 17) == Approx(0.5 * ground_resolution(0.0, 17)).margin(1e-9));
}

TEST_CASE("ground_resolution rejects out-of-range zoom") {
  CHECK_THROWS_AS(ground_resolution(0.0, -1), RangeError);
  CHECK_THROWS_AS(ground_resolution(0.0, 23), RangeError);
}

TEST_CASE("grid validation rejects degenerate bboxes") {
  GridSpec g;
  g.lat_min = 10.0;
  g.lat_max = 9.0;
  g.lon_min = 0.0;
  g.lon_max = 1.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.lat_max = 11.0;
  g.cell_side_m = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("cell_index puts the south-west corner in cell (0,0)") {
  GridSpec g = make_grid_spec(41.85, -87.68, 4, 4, 30.0);
  auto id = cell_index(g.lat_min, g.lon_min, g);
  REQUIRE(id.has_value());
  CHECK(*id == CellId{0, 0});
}

TEST_CASE("cell_index returns the outside marker beyond the bbox") {
  GridSpec g = make_grid_spec(41.85, -87.68, 4, 4, 30.0);
  CHECK_FALSE(cell_index(g.lat_max + 1e-6, g.lon_min, g).has_value());
  CHECK_FALSE(cell_index(g.lat_min, g.lon_min - 1e-6, g).has_value());
}

TEST_CASE("cell_index agrees with the brute-force rectangle oracle") {
  GridSpec g = make_grid_spec(41.85, -87.68, 12, 15, 30.0);
  Rng rng = make_rng(7);
  for (int i = 0; i < 10000; ++i) {
    double lat = g.lat_min + (g.lat_max - g.lat_min) * rand_unit(rng);
    double lon = g.lon_min + (g.lon_max - g.lon_min) * rand_unit(rng);
    auto fast = cell_index(lat, lon, g);
    auto slow = oracles::brute_force_cell(lat, lon, g);
    REQUIRE(fast.has_value());
    REQUIRE(slow.has_value());
    CHECK(*fast == *slow);
  }
}

TEST_CASE("cell_center of a 1x1 grid is the bbox midpoint") {
  GridSpec g = make_grid_spec(41.85, -87.68, 1, 1, 30.0);
  auto [lat, lon] = cell_center(CellId{0, 0}, g);
  CHECK(lat == Approx((g.lat_min + g.lat_min + g.dlat()) / 2.0).margin(1e-12));
  CHECK(lon == Approx((g.lon_min + g.lon_min + g.dlon()) / 2.0).margin(1e-12));
  CHECK(g.contains(lat, lon));
}

TEST_CASE("cell_center round-trips through cell_index on a 5x7 grid") {
  GridSpec g = make_grid_spec(41.85, -87.68, 5, 7, 30.0);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) {
      auto [lat, lon] = cell_center(CellId{r, c}, g);
      auto id = cell_index(lat, lon, g);
      REQUIRE(id.has_value());
      CHECK(*id == CellId{r, c});
    }
}

TEST_CASE("cell_center matches a hand-computed Chicago-latitude value") {
  GridSpec g = make_grid_spec(41.85, -87.68, 10, 10, 30.0);
  auto [lat, lon] = cell_center(CellId{2, 3}, g);
  // lat_min + 2.5 * dlat and lon_min + 3.5 * dlon with dlat = 30 / (C/360),
  // dlon = dlat / cos(center latitude), computed independently.
  CHECK(lat == Approx(41.850673736463079).margin(1e-9));
  CHECK(lon == Approx(-87.678733711312120).margin(1e-9));
}

TEST_CASE("cell_center and cell_bbox reject out-of-grid cells") {
  GridSpec g = make_grid_spec(41.85, -87.68, 3, 3, 30.0);
  CHECK_THROWS_AS(cell_center(CellId{3, 0}, g), RangeError);
  CHECK_THROWS_AS(cell_center(CellId{0, -1}, g), RangeError);
  CHECK_THROWS_AS(cell_bbox(CellId{0, 3}, g), RangeError);
}

TEST_CASE("make_grid_spec realizes the requested cell counts") {
  for (int rows : {1, 3, 12, 40})
    for (int cols : {1, 5, 40}) {
      GridSpec g = make_grid_spec(41.85, -87.68, rows, cols, 30.0);
      CHECK(g.n_rows() == rows);
      CHECK(g.n_cols() == cols);
    }
  CHECK_THROWS_AS(make_grid_spec(0.0, 0.0, 0, 1), ConfigError);
}

TEST_CASE("tile_footprint side length at the equator") {
  auto side_m = [](const BBox& bb) {
    return (bb.lat_max - bb.lat_min) * kEarthCircumferenceM / 360.0;
  };
  BBox z17 = tile_footprint({0.0, 0.0, 17, 256});
  CHECK(side_m(z17) == Approx(305.75).margin(0.01));
  BBox z20 = tile_footprint({0.0, 0.0, 20, 256});
  CHECK(side_m(z20) == Approx(38.22).margin(0.01));
  BBox z18 = tile_footprint({0.0, 0.0, 18, 256});
  CHECK(side_m(z18) == Approx(side_m(z17) / 2.0).margin(1e-9));
}

TEST_CASE("tile_footprint validates its geometry") {
  CHECK_THROWS_AS(tile_footprint({0.0, 0.0, 25, 256}), ConfigError);
  CHECK_THROWS_AS(tile_footprint({0.0, 0.0, 17, 0}), ConfigError);
}

TEST_CASE("increasing longitude never decreases the column index") {
  GridSpec g = make_grid_spec(41.85, -87.68, 3, 20, 30.0);
  double lat = g.lat_min + 0.4 * (g.lat_max - g.lat_min);
  int prev = -1;
  for (int i = 0; i <= 400; ++i) {
    double lon = g.lon_min + (g.lon_max - g.lon_min) * i / 400.0;
    auto id = cell_index(lat, lon, g);
    REQUIRE(id.has_value());
    CHECK(id->col >= prev);
    prev = id->col;
  }
  CHECK(prev == g.n_cols() - 1);
}

TEST_CASE("format_coord renders 7 decimal places") {
  CHECK(format_coord(41.8781234999) == "41.8781235");
  CHECK(format_coord(-87.63) == "-87.6300000");
}
