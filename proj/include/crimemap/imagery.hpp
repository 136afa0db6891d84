#pragma once

// Tile acquisition: URL building, a caching rate-limited HTTP provider, a
// deterministic synthetic provider for offline runs, and dataset assembly.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/geo.hpp"
#include "crimemap/image.hpp"
#include "crimemap/labeling.hpp"

namespace crimemap {

enum class TileSource { Remote, Cache, Synthetic };

struct ImageTile {
  Image image;  // H = W = geometry.size_px, RGB
  TileGeometry geometry;
  TileSource source = TileSource::Synthetic;
};

struct ProviderConfig {
  std::string url_template;  // placeholders {lat} {lon} {zoom} {size} {key}
  std::string api_key_env;   // environment variable holding the key
  std::filesystem::path cache_dir = "tile_cache";
  double rate_limit = 10.0;  // requests per second
  int retries = 3;

  void validate() const {
    for (const char* ph : {"{lat}", "{lon}", "{zoom}", "{size}"})
      if (url_template.find(ph) == std::string::npos)
        throw ConfigError(std::string("url_template missing placeholder ") + ph);
    if (rate_limit <= 0.0) throw ConfigError("rate_limit must be positive");
    if (retries < 0) throw ConfigError("retries must be non-negative");
  }
};

namespace detail {
inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}
}  // namespace detail

// Substitutes placeholders; lat/lon at 7 decimal places. The API key comes
// from the environment and never appears in config files or logs.
inline std::string tile_request_url(const TileGeometry& geom, const ProviderConfig& cfg) {
  cfg.validate();
  geom.validate();
  std::string url = cfg.url_template;
  if (url.find("{key}") != std::string::npos) {
    const char* key = cfg.api_key_env.empty() ? nullptr : std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key)
      throw ConfigError("url_template contains {key} but environment variable '" +
                        cfg.api_key_env + "' is unset");
    url = detail::replace_all(url, "{key}", key);
  }
  url = detail::replace_all(url, "{lat}", format_coord(geom.center_lat));
  url = detail::replace_all(url, "{lon}", format_coord(geom.center_lon));
  url = detail::replace_all(url, "{zoom}", std::to_string(geom.zoom));
  url = detail::replace_all(url, "{size}", std::to_string(geom.size_px));
  return url;
}

// Blocking token bucket shared across fetch workers.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : interval_(1.0 / per_second) {}

  void acquire() {
    std::unique_lock lock(mu_);
    auto now = std::chrono::steady_clock::now();
    if (next_ < now) next_ = now;
    auto slot = next_;
    next_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(interval_));
    lock.unlock();
    std::this_thread::sleep_until(slot);
  }

 private:
  std::mutex mu_;
  double interval_;
  std::chrono::steady_clock::time_point next_;
};

// Cell-keyed tile source. Remote providers ignore the cell; the synthetic
// provider uses it to look up the planted label.
class TileProvider {
 public:
  virtual ~TileProvider() = default;
  virtual ImageTile get(const CellId& cell, const TileGeometry& geom) = 0;
};

// ---------------------------------------------------------------------------
// Synthetic tiles

// Deterministic label-correlated texture: Low renders green-dominant terrain
// with scattered blobs and sparse rooftop rectangles, High renders
// gray-dominant ground with road-like line segments, Neutral mixes both.
// Seeded noise keeps the mapping learnable but not trivial.
inline ImageTile synth_tile(const CellId& cell, Label label, uint64_t seed,
                            const TileGeometry& geom) {
  geom.validate();
  uint64_t key = fnv1a64(&seed, sizeof(seed));
  int64_t rc[2] = {cell.row, cell.col};
  key = fnv1a64(rc, sizeof(rc), key);
  uint8_t lb = static_cast<uint8_t>(label);
  key = fnv1a64(&lb, sizeof(lb), key);
  Rng rng(key);

  const int n = geom.size_px;
  Image img = Image::make(n, n, 3);

  int base[3];
  switch (label) {
    case Label::Low:
      base[0] = 62;
      base[1] = 138;
      base[2] = 58;
      break;
    case Label::Neutral:
      base[0] = 128;
      base[1] = 124;
      base[2] = 84;
      break;
    case Label::High:
      base[0] = 122;
      base[1] = 118;
      base[2] = 126;
      break;
  }
  int jitter[3];
  for (int c = 0; c < 3; ++c) jitter[c] = static_cast<int>(rand_below(rng, 21)) - 10;

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      uint8_t* p = img.at(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = static_cast<uint8_t>(std::clamp(base[c] + jitter[c], 0, 255));
    }

  auto fill_rect = [&](int x0, int y0, int w, int h, int r, int g, int b) {
    for (int y = std::max(0, y0); y < std::min(n, y0 + h); ++y)
      for (int x = std::max(0, x0); x < std::min(n, x0 + w); ++x) {
        uint8_t* p = img.at(x, y);
        p[0] = static_cast<uint8_t>(r);
        p[1] = static_cast<uint8_t>(g);
        p[2] = static_cast<uint8_t>(b);
      }
  };
  auto fill_blob = [&](int cx, int cy, int rad, int r, int g, int b) {
    for (int y = std::max(0, cy - rad); y < std::min(n, cy + rad + 1); ++y)
      for (int x = std::max(0, cx - rad); x < std::min(n, cx + rad + 1); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) {
          uint8_t* p = img.at(x, y);
          p[0] = static_cast<uint8_t>(r);
          p[1] = static_cast<uint8_t>(g);
          p[2] = static_cast<uint8_t>(b);
        }
  };
  auto draw_road = [&](bool horizontal, int offset, int thickness) {
    if (horizontal)
      fill_rect(0, offset, n, thickness, 70, 70, 74);
    else
      fill_rect(offset, 0, thickness, n, 70, 70, 74);
  };

  int blob_count = label == Label::Low ? 10 : (label == Label::Neutral ? 5 : 2);
  int rect_count = label == Label::High ? 10 : (label == Label::Neutral ? 5 : 2);
  int road_count = label == Label::High ? 4 : (label == Label::Neutral ? 2 : 0);

  for (int i = 0; i < blob_count; ++i) {
    int cx = static_cast<int>(rand_below(rng, n));
    int cy = static_cast<int>(rand_below(rng, n));
    int rad = n / 24 + static_cast<int>(rand_below(rng, std::max(1, n / 12)));
    fill_blob(cx, cy, rad, 34 + static_cast<int>(rand_below(rng, 20)),
              96 + static_cast<int>(rand_below(rng, 40)), 30 + static_cast<int>(rand_below(rng, 20)));
  }
  for (int i = 0; i < rect_count; ++i) {
    int x0 = static_cast<int>(rand_below(rng, n));
    int y0 = static_cast<int>(rand_below(rng, n));
    int w = n / 16 + static_cast<int>(rand_below(rng, std::max(1, n / 8)));
    int h = n / 16 + static_cast<int>(rand_below(rng, std::max(1, n / 8)));
    int shade = 140 + static_cast<int>(rand_below(rng, 80));
    fill_rect(x0, y0, w, h, shade, shade - 10, shade - 14);
  }
  for (int i = 0; i < road_count; ++i)
    draw_road(rand_below(rng, 2) == 0, static_cast<int>(rand_below(rng, n)),
              n / 32 + static_cast<int>(rand_below(rng, std::max(1, n / 32))));

  // Per-pixel noise.
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    int v = img.pixels[i] + static_cast<int>(rand_below(rng, 33)) - 16;
    img.pixels[i] = static_cast<uint8_t>(std::clamp(v, 0, 255));
  }

  return {std::move(img), geom, TileSource::Synthetic};
}

// Serves synthetic tiles for a labeled grid; the texture seed is shared
// across cities so cross-city experiments see the same visual vocabulary.
class SyntheticTileProvider : public TileProvider {
 public:
  SyntheticTileProvider(GridSpec grid, std::vector<Label> cell_labels, uint64_t texture_seed)
      : grid_(std::move(grid)), labels_(std::move(cell_labels)), seed_(texture_seed) {
    if (labels_.size() != grid_.n_cells())
      throw ShapeError("synthetic provider: label array does not cover the grid");
  }

  ImageTile get(const CellId& cell, const TileGeometry& geom) override {
    if (cell.row < 0 || cell.row >= grid_.n_rows() || cell.col < 0 || cell.col >= grid_.n_cols())
      throw RangeError("synthetic provider: cell outside grid");
    Label label = labels_[static_cast<size_t>(cell.row) * grid_.n_cols() + cell.col];
    return synth_tile(cell, label, seed_, geom);
  }

 private:
  GridSpec grid_;
  std::vector<Label> labels_;
  uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Dataset assembly

struct ManifestEntry {
  CellId cell;
  double lat = 0.0;
  double lon = 0.0;
  int zoom = 17;
  Label label = Label::Low;
  std::string tile_path;  // relative to the manifest's directory

  bool operator==(const ManifestEntry&) const = default;
};

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  for (const auto& e : entries)
    out << e.cell.str() << '\t' << format_coord(e.lat) << '\t' << format_coord(e.lon) << '\t'
        << e.zoom << '\t' << label_name(e.label) << '\t' << e.tile_path << '\n';
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string cell_s, lat_s, lon_s, zoom_s, label_s, path_s;
    if (!std::getline(ls, cell_s, '\t') || !std::getline(ls, lat_s, '\t') ||
        !std::getline(ls, lon_s, '\t') || !std::getline(ls, zoom_s, '\t') ||
        !std::getline(ls, label_s, '\t') || !std::getline(ls, path_s))
      throw IoError("manifest line " + std::to_string(line_no) + ": expected 6 tab-separated fields");
    ManifestEntry e;
    if (cell_s.size() < 3 || cell_s[0] != 'r' || cell_s.find('c') == std::string::npos)
      throw IoError("manifest line " + std::to_string(line_no) + ": bad cell id '" + cell_s + "'");
    size_t cpos = cell_s.find('c');
    e.cell.row = std::stoi(cell_s.substr(1, cpos - 1));
    e.cell.col = std::stoi(cell_s.substr(cpos + 1));
    e.lat = std::stod(lat_s);
    e.lon = std::stod(lon_s);
    e.zoom = std::stoi(zoom_s);
    e.label = label_from_name(label_s);
    e.tile_path = path_s;
    entries.push_back(std::move(e));
  }
  return entries;
}

struct DatasetBuildResult {
  std::vector<ManifestEntry> entries;
  std::vector<std::pair<CellId, std::string>> failures;
};

// One tile per labeled cell, centered on the cell center, written under
// out_dir/tiles. Cells are processed in (row, col) order so the manifest is
// deterministic. Fails if more than max_failure_fraction of fetches error.
inline DatasetBuildResult build_dataset(std::vector<LabeledCell> cells, TileProvider& provider,
                                        const GridSpec& grid, int zoom, int size_px,
                                        const std::filesystem::path& out_dir,
                                        double max_failure_fraction = 0.01) {
  std::sort(cells.begin(), cells.end(), [](const LabeledCell& a, const LabeledCell& b) {
    return a.cell < b.cell;
  });
  DatasetBuildResult result;
  std::filesystem::create_directories(out_dir / "tiles");
  for (const auto& cell : cells) {
    auto [lat, lon] = cell_center(cell.cell, grid);
    TileGeometry geom{lat, lon, zoom, size_px};
    std::string rel = "tiles/" + cell.cell.str() + ".png";
    try {
      ImageTile tile = provider.get(cell.cell, geom);
      if (tile.image.width != size_px || tile.image.height != size_px)
        throw FetchError("provider returned wrong tile size");
      write_png(out_dir / rel, tile.image);
    } catch (const std::exception& e) {
      result.failures.emplace_back(cell.cell, e.what());
      continue;
    }
    result.entries.push_back({cell.cell, lat, lon, zoom, cell.label, rel});
  }
  if (!cells.empty() &&
      static_cast<double>(result.failures.size()) > max_failure_fraction * cells.size()) {
    throw FetchError("dataset build: " + std::to_string(result.failures.size()) + " of " +
                     std::to_string(cells.size()) + " tile fetches failed (threshold " +
                     std::to_string(max_failure_fraction) + ")");
  }
  std::ofstream mf(out_dir / "manifest.tsv", std::ios::binary);
  write_manifest(mf, result.entries);
  return result;
}

}  // namespace crimemap
