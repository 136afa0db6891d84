#include <catch2/catch_amalgamated.hpp>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "crimemap/http_provider.hpp"
#include "crimemap/imagery.hpp"

using namespace crimemap;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("crimemap_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Local stub tile server; counts requests and serves deterministic PNGs.
struct StubServer {
  httplib::Server svr;
  std::atomic<int> requests{0};
  int port = 0;
  std::thread thread;

  StubServer() {
    svr.Get("/tile", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      int size = std::stoi(req.get_param_value("s"));
      Image img = Image::make(size, size, 3, 90);
      auto bytes = encode_png(img);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
    svr.Get("/small", [this](const httplib::Request&, httplib::Response& res) {
      ++requests;
      Image img = Image::make(128, 128, 3, 90);
      auto bytes = encode_png(img);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
    svr.Get("/missing", [this](const httplib::Request&, httplib::Response& res) {
      ++requests;
      res.status = 404;
    });
    port = svr.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~StubServer() {
    svr.stop();
    thread.join();
  }
  std::string url(const std::string& path) {
    return "http://127.0.0.1:" + std::to_string(port) + path;
  }
};

}  // namespace

TEST_CASE("tile_request_url substitutes every placeholder") {
  ProviderConfig cfg;
  cfg.url_template = "https://x/map?c={lat},{lon}&z={zoom}&s={size}";
  std::string url = tile_request_url({41.88, -87.63, 17, 256}, cfg);
  CHECK(url == "https://x/map?c=41.8800000,-87.6300000&z=17&s=256");
}

TEST_CASE("url templates missing a placeholder fail validation") {
  ProviderConfig cfg;
  cfg.url_template = "https://x/map?c={lat},{lon}&s={size}";  // no {zoom}
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("coordinates round to 7 decimal places in URLs") {
  ProviderConfig cfg;
  cfg.url_template = "https://x/{lat}/{lon}/{zoom}/{size}";
  std::string url = tile_request_url({41.8781234999, -87.63, 17, 256}, cfg);
  CHECK(url.find("41.8781235") != std::string::npos);
}

TEST_CASE("a {key} placeholder requires the named environment variable") {
  ProviderConfig cfg;
  cfg.url_template = "https://x/{lat}/{lon}/{zoom}/{size}?key={key}";
  cfg.api_key_env = "CRIMEMAP_TEST_KEY_UNSET";
  ::unsetenv("CRIMEMAP_TEST_KEY_UNSET");
  CHECK_THROWS_AS(tile_request_url({41.88, -87.63, 17, 256}, cfg), ConfigError);
  ::setenv("CRIMEMAP_TEST_KEY_UNSET", "sekrit", 1);
  std::string url = tile_request_url({41.88, -87.63, 17, 256}, cfg);
  CHECK(url.find("key=sekrit") != std::string::npos);
  ::unsetenv("CRIMEMAP_TEST_KEY_UNSET");
}

TEST_CASE("synth_tile is byte-identical for the same cell, label and seed") {
  TileGeometry geom{41.88, -87.63, 17, 64};
  auto a = synth_tile(CellId{2, 3}, Label::High, 7, geom);
  auto b = synth_tile(CellId{2, 3}, Label::High, 7, geom);
  CHECK(a.image == b.image);
  CHECK(a.source == TileSource::Synthetic);
  CHECK(a.image.width == 64);
  CHECK(a.image.channels == 3);
}

TEST_CASE("Low tiles are greener than High tiles on average") {
  TileGeometry geom{41.88, -87.63, 17, 64};
  auto mean_green = [&](Label l) {
    double sum = 0;
    size_t n = 0;
    for (int i = 0; i < 100; ++i) {
      auto t = synth_tile(CellId{i / 10, i % 10}, l, 7, geom);
      for (int y = 0; y < t.image.height; ++y)
        for (int x = 0; x < t.image.width; ++x) {
          sum += t.image.at(x, y)[1];
          ++n;
        }
    }
    return sum / n;
  };
  double low_g = mean_green(Label::Low);
  double high_g = mean_green(Label::High);
  CHECK(low_g > high_g + 10.0);
}

TEST_CASE("flipping the label changes more than 10% of pixels") {
  TileGeometry geom{41.88, -87.63, 17, 64};
  auto a = synth_tile(CellId{4, 4}, Label::Low, 7, geom);
  auto b = synth_tile(CellId{4, 4}, Label::High, 7, geom);
  size_t diff = 0;
  for (size_t i = 0; i < a.image.pixels.size(); i += 3)
    if (a.image.pixels[i] != b.image.pixels[i] || a.image.pixels[i + 1] != b.image.pixels[i + 1] ||
        a.image.pixels[i + 2] != b.image.pixels[i + 2])
      ++diff;
  size_t total = a.image.pixels.size() / 3;
  CHECK(static_cast<double>(diff) / total > 0.10);
}

TEST_CASE("manifest entries round-trip through the TSV format") {
  std::vector<ManifestEntry> entries = {
      {CellId{0, 0}, 41.85, -87.68, 17, Label::Low, "tiles/r0c0.png"},
      {CellId{3, 12}, 41.86, -87.67, 18, Label::High, "tiles/r3c12.png"}};
  std::ostringstream out;
  write_manifest(out, entries);
  std::istringstream in(out.str());
  CHECK(read_manifest(in) == entries);
}

TEST_CASE("build_dataset writes one tile and manifest line per labeled cell") {
  auto dir = fresh_dir("dataset");
  GridSpec grid = make_grid_spec(41.85, -87.68, 3, 3, 30.0);
  std::vector<Label> dense(9, Label::Neutral);
  std::vector<LabeledCell> cells;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      dense[r * 3 + c] = static_cast<Label>((r + c) % 3);
      cells.push_back({CellId{r, c}, r + c, dense[r * 3 + c]});
    }
  SyntheticTileProvider provider(grid, dense, 7);
  auto result = build_dataset(cells, provider, grid, 17, 32, dir);
  CHECK(result.failures.empty());
  REQUIRE(result.entries.size() == 9);
  for (const auto& e : result.entries) {
    CHECK(fs::exists(dir / e.tile_path));
    Image img = read_png(dir / e.tile_path, 3);
    CHECK(img.width == 32);
    CHECK(img.height == 32);
    CHECK(e.label == dense[e.cell.row * 3 + e.cell.col]);
  }
  std::string first = slurp(dir / "manifest.tsv");
  build_dataset(cells, provider, grid, 17, 32, dir);
  CHECK(slurp(dir / "manifest.tsv") == first);
  fs::remove_all(dir);
}

TEST_CASE("http provider caches tiles and never refetches warm keys") {
  StubServer server;
  auto dir = fresh_dir("cache");
  ProviderConfig cfg;
  cfg.url_template = server.url("/tile?c={lat},{lon}&z={zoom}&s={size}");
  cfg.cache_dir = dir;
  cfg.rate_limit = 1000.0;
  HttpTileProvider provider(cfg);

  for (int i = 0; i < 6; ++i) {
    auto tile = provider.fetch({41.88 + i * 0.001, -87.63, 17, 32});
    CHECK(tile.source == TileSource::Remote);
    CHECK(tile.image.width == 32);
  }
  CHECK(server.requests == 6);  // cold cache: exactly one request per key

  auto again = provider.fetch({41.88, -87.63, 17, 32});
  CHECK(again.source == TileSource::Cache);
  CHECK(server.requests == 6);  // warm key served without a network call
  fs::remove_all(dir);
}

TEST_CASE("the cache key separates zoom and size") {
  StubServer server;
  auto dir = fresh_dir("cachekey");
  ProviderConfig cfg;
  cfg.url_template = server.url("/tile?c={lat},{lon}&z={zoom}&s={size}");
  cfg.cache_dir = dir;
  cfg.rate_limit = 1000.0;
  HttpTileProvider provider(cfg);
  provider.fetch({41.88, -87.63, 17, 32});
  auto other_zoom = provider.fetch({41.88, -87.63, 18, 32});
  auto other_size = provider.fetch({41.88, -87.63, 17, 16});
  CHECK(other_zoom.source == TileSource::Remote);
  CHECK(other_size.source == TileSource::Remote);
  CHECK(other_size.image.width == 16);
  CHECK(server.requests == 3);
  fs::remove_all(dir);
}

TEST_CASE("a provider returning the wrong tile size is a fetch error") {
  StubServer server;
  auto dir = fresh_dir("mismatch");
  ProviderConfig cfg;
  cfg.url_template = server.url("/small?c={lat},{lon}&z={zoom}&s={size}");
  cfg.cache_dir = dir;
  cfg.rate_limit = 1000.0;
  HttpTileProvider provider(cfg);
  CHECK_THROWS_AS(provider.fetch({41.88, -87.63, 17, 256}), FetchError);
  fs::remove_all(dir);
}

TEST_CASE("404 responses fail fast without burning retries") {
  StubServer server;
  auto dir = fresh_dir("notfound");
  ProviderConfig cfg;
  cfg.url_template = server.url("/missing?c={lat},{lon}&z={zoom}&s={size}");
  cfg.cache_dir = dir;
  cfg.rate_limit = 1000.0;
  cfg.retries = 3;
  HttpTileProvider provider(cfg);
  CHECK_THROWS_AS(provider.fetch({41.88, -87.63, 17, 32}), FetchError);
  CHECK(server.requests == 1);
  fs::remove_all(dir);
}

TEST_CASE("the rate limiter keeps the observed request rate at or below the limit") {
  StubServer server;
  auto dir = fresh_dir("ratelimit");
  ProviderConfig cfg;
  cfg.url_template = server.url("/tile?c={lat},{lon}&z={zoom}&s={size}");
  cfg.cache_dir = dir;
  cfg.rate_limit = 40.0;
  HttpTileProvider provider(cfg);
  auto start = std::chrono::steady_clock::now();
  const int n = 9;
  for (int i = 0; i < n; ++i) provider.fetch({41.0 + i * 0.001, -87.63, 17, 16});
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // n requests span n - 1 limiter intervals.
  double observed_rate = (n - 1) / elapsed;
  CHECK(observed_rate <= cfg.rate_limit * 1.10);
  fs::remove_all(dir);
}

TEST_CASE("provider config validation rejects bad rate limits") {
  ProviderConfig cfg;
  cfg.url_template = "https://x/{lat}/{lon}/{zoom}/{size}";
  cfg.rate_limit = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.rate_limit = 10.0;
  cfg.retries = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the synthetic provider rejects cells outside its grid") {
  GridSpec grid = make_grid_spec(41.85, -87.68, 2, 2, 30.0);
  SyntheticTileProvider provider(grid, std::vector<Label>(4, Label::Low), 7);
  CHECK_THROWS_AS(provider.get(CellId{2, 0}, TileGeometry{41.85, -87.68, 17, 32}), RangeError);
}
