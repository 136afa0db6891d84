#pragma once

// Web-Mercator projection, square-grid discretization of a city bounding box
// and tile-geometry math.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

#include "crimemap/common.hpp"

namespace crimemap {

inline constexpr double kEarthCircumferenceM = 40075016.686;
inline constexpr double kMercatorLatLimit = 85.05113;

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

struct WorldPoint {
  double x = 0.0;  // normalized Web-Mercator, [0,1]
  double y = 0.0;
};

// Standard slippy-map projection onto the unit square.
inline WorldPoint latlon_to_world(double lat, double lon) {
  if (std::abs(lat) > kMercatorLatLimit)
    throw RangeError("latitude " + std::to_string(lat) + " beyond Web-Mercator limit");
  double x = (lon + 180.0) / 360.0;
  double lat_rad = deg2rad(lat);
  double y = 0.5 - std::log(std::tan(M_PI / 4.0 + lat_rad / 2.0)) / (2.0 * M_PI);
  return {x, y};
}

inline std::pair<double, double> world_to_latlon(const WorldPoint& p) {
  double lon = p.x * 360.0 - 180.0;
  double lat = rad2deg(2.0 * std::atan(std::exp((0.5 - p.y) * 2.0 * M_PI)) - M_PI / 2.0);
  return {lat, lon};
}

// Meters covered by one pixel at the given latitude and zoom (256-px tiles).
inline double ground_resolution(double lat, int zoom) {
  if (zoom < 0 || zoom > 22) throw RangeError("zoom must be in [0, 22]");
  return kEarthCircumferenceM / 256.0 * std::cos(deg2rad(lat)) / static_cast<double>(1 << zoom);
}

struct CellId {
  int row = 0;
  int col = 0;
  auto operator<=>(const CellId&) const = default;

  std::string str() const { return "r" + std::to_string(row) + "c" + std::to_string(col); }
};

// Square grid over a bounding box. Cell edges step cell_side_m in a local
// equirectangular metric anchored at the bbox center latitude, so indexing is
// O(1) and exactly invertible. Row 0 is the southernmost row.
struct GridSpec {
  double lat_min = 0.0, lat_max = 0.0;
  double lon_min = 0.0, lon_max = 0.0;
  double cell_side_m = 30.0;

  void validate() const {
    if (!(lat_min < lat_max) || !(lon_min < lon_max))
      throw ConfigError("grid bbox: require lat_min < lat_max and lon_min < lon_max");
    if (!(cell_side_m > 0.0)) throw ConfigError("grid cell_side_m must be positive");
    if (std::abs(lat_min) > kMercatorLatLimit || std::abs(lat_max) > kMercatorLatLimit)
      throw ConfigError("grid bbox exceeds Web-Mercator latitude limit");
  }

  double center_lat() const { return (lat_min + lat_max) / 2.0; }

  // Degrees per cell in the local metric.
  double dlat() const { return cell_side_m / (kEarthCircumferenceM / 360.0); }
  double dlon() const {
    return cell_side_m / (kEarthCircumferenceM / 360.0 * std::cos(deg2rad(center_lat())));
  }

  int n_rows() const {
    return std::max(1, static_cast<int>(std::ceil((lat_max - lat_min) / dlat() - 1e-12)));
  }
  int n_cols() const {
    return std::max(1, static_cast<int>(std::ceil((lon_max - lon_min) / dlon() - 1e-12)));
  }
  size_t n_cells() const { return static_cast<size_t>(n_rows()) * static_cast<size_t>(n_cols()); }

  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
};

// Cells are half-open (inclusive low edge); a point on a shared edge belongs
// to the higher-index cell. Points exactly at the bbox top/right edge are in
// bbox and clamp into the last row/col.
inline std::optional<CellId> cell_index(double lat, double lon, const GridSpec& grid) {
  if (!grid.contains(lat, lon)) return std::nullopt;
  int row = static_cast<int>(std::floor((lat - grid.lat_min) / grid.dlat()));
  int col = static_cast<int>(std::floor((lon - grid.lon_min) / grid.dlon()));
  row = std::min(row, grid.n_rows() - 1);
  col = std::min(col, grid.n_cols() - 1);
  return CellId{row, col};
}

inline std::pair<double, double> cell_center(const CellId& cell, const GridSpec& grid) {
  if (cell.row < 0 || cell.row >= grid.n_rows() || cell.col < 0 || cell.col >= grid.n_cols())
    throw RangeError("cell " + cell.str() + " outside grid");
  double lat = grid.lat_min + (cell.row + 0.5) * grid.dlat();
  double lon = grid.lon_min + (cell.col + 0.5) * grid.dlon();
  return {lat, lon};
}

struct BBox {
  double lat_min, lat_max, lon_min, lon_max;
};

inline BBox cell_bbox(const CellId& cell, const GridSpec& grid) {
  if (cell.row < 0 || cell.row >= grid.n_rows() || cell.col < 0 || cell.col >= grid.n_cols())
    throw RangeError("cell " + cell.str() + " outside grid");
  return {grid.lat_min + cell.row * grid.dlat(), grid.lat_min + (cell.row + 1) * grid.dlat(),
          grid.lon_min + cell.col * grid.dlon(), grid.lon_min + (cell.col + 1) * grid.dlon()};
}

// Builds a bbox that discretizes into exactly rows x cols cells (the top and
// right edges are pulled in by a hair so ceil() cannot overshoot).
inline GridSpec make_grid_spec(double lat_min, double lon_min, int rows, int cols,
                               double cell_side_m = 30.0) {
  if (rows < 1 || cols < 1) throw ConfigError("make_grid_spec: rows/cols must be >= 1");
  GridSpec g;
  g.lat_min = lat_min;
  g.lon_min = lon_min;
  g.cell_side_m = cell_side_m;
  g.lat_max = lat_min + 1.0;  // placeholder so dlat/dlon are computable
  g.lon_max = lon_min + 1.0;
  // dlon depends on the center latitude; iterate once to settle it.
  for (int i = 0; i < 2; ++i) {
    g.lat_max = lat_min + (rows - 1e-4) * g.dlat();
    g.lon_max = lon_min + (cols - 1e-4) * g.dlon();
  }
  g.validate();
  if (g.n_rows() != rows || g.n_cols() != cols)
    throw ConfigError("make_grid_spec: failed to realize requested cell counts");
  return g;
}

struct TileGeometry {
  double center_lat = 0.0;
  double center_lon = 0.0;
  int zoom = 17;
  int size_px = 256;

  void validate() const {
    if (zoom < 0 || zoom > 22) throw ConfigError("tile zoom must be in [0, 22]");
    if (size_px <= 0) throw ConfigError("tile size_px must be positive");
  }
};

// Geographic bbox covered by one tile; side length in meters is
// size_px * ground_resolution at the tile center.
inline BBox tile_footprint(const TileGeometry& geom) {
  geom.validate();
  double side_m = geom.size_px * ground_resolution(geom.center_lat, geom.zoom);
  double half_dlat = side_m / 2.0 / (kEarthCircumferenceM / 360.0);
  double half_dlon =
      side_m / 2.0 / (kEarthCircumferenceM / 360.0 * std::cos(deg2rad(geom.center_lat)));
  return {geom.center_lat - half_dlat, geom.center_lat + half_dlat, geom.center_lon - half_dlon,
          geom.center_lon + half_dlon};
}

// "41.8781235" style formatting, 7 decimal places, shared by cache keys,
// URLs and manifests.
inline std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.7f", v);
  return buf;
}

}  // namespace crimemap
