#pragma once

// City-scale three-level crime maps: prediction over a grid, the
// official-data reference map, map-vs-map accuracy, GeoJSON and PNG output.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crimemap/geo.hpp"
#include "crimemap/imagery.hpp"
#include "crimemap/labeling.hpp"
#include "crimemap/net.hpp"

namespace crimemap {

// Label plus the "no data / fetch failed" state.
enum class MapLabel : uint8_t { Low = 0, Neutral = 1, High = 2, Unknown = 3 };

inline MapLabel to_map_label(Label l) { return static_cast<MapLabel>(l); }

inline const char* map_label_name(MapLabel l) {
  switch (l) {
    case MapLabel::Low:
      return "Low";
    case MapLabel::Neutral:
      return "Neutral";
    case MapLabel::High:
      return "High";
    case MapLabel::Unknown:
      return "Unknown";
  }
  return "?";
}

enum class Provenance { Official, Predicted };

struct CityMap {
  GridSpec grid;
  std::vector<MapLabel> labels;  // dense, row-major, row 0 = southernmost
  std::vector<std::optional<int64_t>> scores;  // official maps carry cell scores
  Provenance provenance = Provenance::Official;
  std::string source_id;  // model file or bin-model identifier

  MapLabel at(const CellId& c) const {
    return labels[static_cast<size_t>(c.row) * grid.n_cols() + c.col];
  }
};

// Ground-truth map copied from the labeling pipeline; cells missing from the
// input stay Unknown.
inline CityMap official_map(const std::vector<LabeledCell>& labeled, const GridSpec& grid) {
  grid.validate();
  CityMap map;
  map.grid = grid;
  map.provenance = Provenance::Official;
  map.labels.assign(grid.n_cells(), MapLabel::Unknown);
  map.scores.assign(grid.n_cells(), std::nullopt);
  for (const auto& lc : labeled) {
    if (lc.cell.row < 0 || lc.cell.row >= grid.n_rows() || lc.cell.col < 0 ||
        lc.cell.col >= grid.n_cols())
      throw RangeError("official_map: cell " + lc.cell.str() + " outside grid");
    size_t i = static_cast<size_t>(lc.cell.row) * grid.n_cols() + lc.cell.col;
    map.labels[i] = to_map_label(lc.label);
    map.scores[i] = lc.score;
  }
  return map;
}

// Runs the classifier on every cell's centered tile. Cells whose tile fetch
// fails are Unknown; the run aborts if the failure fraction exceeds the
// threshold. Cell order does not affect the result.
inline CityMap predict_map(const ModelParams& params, TileProvider& provider, const GridSpec& grid,
                           int zoom, int size_px, double max_failure_fraction = 0.01,
                           int workers = 1) {
  grid.validate();
  CityMap map;
  map.grid = grid;
  map.provenance = Provenance::Predicted;
  map.labels.assign(grid.n_cells(), MapLabel::Unknown);
  map.scores.assign(grid.n_cells(), std::nullopt);

  Network<float> net(params);
  Shape3 input_shape = params.arch.chain().front();
  const int rows = grid.n_rows(), cols = grid.n_cols();
  const long n = static_cast<long>(grid.n_cells());
  std::vector<std::string> failures;
  std::exception_ptr error;

#pragma omp parallel num_threads(std::max(1, workers))
  {
    auto ws = net.make_workspace();
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      CellId cell{static_cast<int>(i / cols), static_cast<int>(i % cols)};
      try {
        auto [lat, lon] = cell_center(cell, grid);
        ImageTile tile = provider.get(cell, TileGeometry{lat, lon, zoom, size_px});
        auto input = preprocess_tile(tile.image, input_shape);
        int pred = net.predict(input, ws);
        map.labels[i] = static_cast<MapLabel>(pred);
      } catch (const FetchError& e) {
#pragma omp critical
        failures.push_back(cell.str() + ": " + e.what());
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
  (void)rows;
  if (static_cast<double>(failures.size()) > max_failure_fraction * static_cast<double>(n))
    throw FetchError("predict_map: " + std::to_string(failures.size()) + " of " +
                     std::to_string(n) + " tile fetches failed");
  return map;
}

struct MapAccuracy {
  double accuracy = 0.0;
  size_t compared = 0;                          // cells known in both maps
  std::array<std::array<size_t, 3>, 3> confusion{};  // [truth][prediction]
  std::array<double, 3> per_label_agreement{};       // diagonal / truth-row total
};

// Fraction of agreeing cells over cells known in both maps. The accuracy
// value is symmetric in its arguments; the confusion matrix reads the second
// map as truth (rows) and the first as prediction (columns).
inline MapAccuracy map_accuracy(const CityMap& predicted, const CityMap& reference) {
  if (predicted.labels.size() != reference.labels.size() ||
      predicted.grid.n_rows() != reference.grid.n_rows() ||
      predicted.grid.n_cols() != reference.grid.n_cols())
    throw ShapeError("map_accuracy: grids differ");
  MapAccuracy out;
  size_t agree = 0;
  for (size_t i = 0; i < predicted.labels.size(); ++i) {
    MapLabel p = predicted.labels[i], r = reference.labels[i];
    if (p == MapLabel::Unknown || r == MapLabel::Unknown) continue;
    ++out.compared;
    out.confusion[static_cast<int>(r)][static_cast<int>(p)]++;
    if (p == r) ++agree;
  }
  out.accuracy = out.compared == 0 ? 0.0 : static_cast<double>(agree) / out.compared;
  for (int k = 0; k < 3; ++k) {
    size_t row_total = out.confusion[k][0] + out.confusion[k][1] + out.confusion[k][2];
    out.per_label_agreement[k] =
        row_total == 0 ? 0.0 : static_cast<double>(out.confusion[k][k]) / row_total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

struct Palette {
  // Fig-3 colors: low blue, neutral yellow, high red.
  std::array<std::array<uint8_t, 3>, 3> rgb{{{0, 0, 255}, {255, 255, 0}, {255, 0, 0}}};

  void validate() const {
    if (rgb[0] == rgb[1] || rgb[1] == rgb[2] || rgb[0] == rgb[2])
      throw ConfigError("palette colors must be distinct");
  }
};

// One Polygon feature per non-Unknown cell. `only` restricts output to a
// single label layer.
inline nlohmann::json render_geojson(const CityMap& map,
                                     std::optional<MapLabel> only = std::nullopt) {
  nlohmann::json features = nlohmann::json::array();
  int cols = map.grid.n_cols();
  for (size_t i = 0; i < map.labels.size(); ++i) {
    MapLabel l = map.labels[i];
    if (l == MapLabel::Unknown) continue;
    if (only && l != *only) continue;
    CellId cell{static_cast<int>(i / cols), static_cast<int>(i % cols)};
    BBox bb = cell_bbox(cell, map.grid);
    nlohmann::json ring = nlohmann::json::array();
    ring.push_back({bb.lon_min, bb.lat_min});
    ring.push_back({bb.lon_max, bb.lat_min});
    ring.push_back({bb.lon_max, bb.lat_max});
    ring.push_back({bb.lon_min, bb.lat_max});
    ring.push_back({bb.lon_min, bb.lat_min});
    nlohmann::json props = {{"row", cell.row}, {"col", cell.col}, {"label", map_label_name(l)}};
    if (map.scores[i]) props["score"] = *map.scores[i];
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

// Choropleth raster: each cell a scale x scale solid block of its palette
// color, Unknown transparent, north at top (grid row 0 is the southernmost,
// so it renders at the bottom).
inline Image render_png(const CityMap& map, const Palette& palette, int scale_px_per_cell) {
  palette.validate();
  if (scale_px_per_cell < 1) throw ConfigError("render scale must be >= 1");
  int rows = map.grid.n_rows(), cols = map.grid.n_cols();
  Image img = Image::make(cols * scale_px_per_cell, rows * scale_px_per_cell, 4, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      MapLabel l = map.labels[static_cast<size_t>(r) * cols + c];
      if (l == MapLabel::Unknown) continue;  // alpha stays 0
      const auto& color = palette.rgb[static_cast<int>(l)];
      int y0 = (rows - 1 - r) * scale_px_per_cell;
      int x0 = c * scale_px_per_cell;
      for (int y = y0; y < y0 + scale_px_per_cell; ++y)
        for (int x = x0; x < x0 + scale_px_per_cell; ++x) {
          uint8_t* p = img.at(x, y);
          p[0] = color[0];
          p[1] = color[1];
          p[2] = color[2];
          p[3] = 255;
        }
    }
  return img;
}

// Inverse of render_png: reads back block colors into a label array.
inline std::vector<MapLabel> labels_from_png(const Image& img, const Palette& palette,
                                             int scale_px_per_cell, int rows, int cols) {
  if (img.width != cols * scale_px_per_cell || img.height != rows * scale_px_per_cell ||
      img.channels != 4)
    throw ShapeError("labels_from_png: image dimensions do not match the grid");
  std::vector<MapLabel> labels(static_cast<size_t>(rows) * cols, MapLabel::Unknown);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const uint8_t* p = img.at(c * scale_px_per_cell, (rows - 1 - r) * scale_px_per_cell);
      if (p[3] == 0) continue;
      for (int k = 0; k < 3; ++k)
        if (p[0] == palette.rgb[k][0] && p[1] == palette.rgb[k][1] && p[2] == palette.rgb[k][2])
          labels[static_cast<size_t>(r) * cols + c] = static_cast<MapLabel>(k);
    }
  return labels;
}

}  // namespace crimemap
