#pragma once

// Remote static-map tile provider: on-disk PNG cache, token-bucket rate
// limiting, bounded retries with exponential backoff, per-key single-flight.

#include <httplib.h>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "crimemap/imagery.hpp"

namespace crimemap {

class HttpTileProvider : public TileProvider {
 public:
  explicit HttpTileProvider(ProviderConfig cfg) : cfg_(std::move(cfg)), limiter_(cfg_.rate_limit) {
    cfg_.validate();
  }

  ImageTile get(const CellId&, const TileGeometry& geom) override { return fetch(geom); }

  // Cache key = (zoom, lat/lon at 7 decimals, size); cache hits never touch
  // the network.
  ImageTile fetch(const TileGeometry& geom) {
    geom.validate();
    auto path = cache_path(geom);

    std::shared_ptr<std::mutex> flight;
    {
      std::lock_guard lock(flights_mu_);
      auto& slot = flights_[path.string()];
      if (!slot) slot = std::make_shared<std::mutex>();
      flight = slot;
    }
    std::lock_guard flight_lock(*flight);

    if (std::filesystem::exists(path)) {
      Image img = read_png(path, 3);
      if (img.width == geom.size_px && img.height == geom.size_px)
        return {std::move(img), geom, TileSource::Cache};
      // Stale or foreign file under the cache key; refetch.
      std::filesystem::remove(path);
    }

    std::string url = tile_request_url(geom, cfg_);
    // Redacted variant for error messages; the real key never reaches logs.
    ProviderConfig redacted = cfg_;
    redacted.url_template = detail::replace_all(redacted.url_template, "{key}", "***");
    auto bytes = http_get(url, tile_request_url(geom, redacted));
    Image img = decode_png(bytes, 3);
    if (img.width != geom.size_px || img.height != geom.size_px)
      throw FetchError("provider mismatch: requested " + std::to_string(geom.size_px) +
                       "px tile, got " + std::to_string(img.width) + "x" +
                       std::to_string(img.height));
    write_png(path, img);
    return {std::move(img), geom, TileSource::Remote};
  }

  std::filesystem::path cache_path(const TileGeometry& geom) const {
    return cfg_.cache_dir / std::to_string(geom.zoom) /
           (format_coord(geom.center_lat) + "_" + format_coord(geom.center_lon) + "_" +
            std::to_string(geom.size_px) + ".png");
  }

 private:
  std::vector<uint8_t> http_get(const std::string& url, const std::string& display_url) {
    // Split into origin and path+query for httplib.
    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("url must start with http:// or https://");
    size_t path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    std::string last_status = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
      limiter_.acquire();
      httplib::Client client(origin);
      client.set_connection_timeout(10);
      client.set_read_timeout(30);
      auto res = client.Get(path);
      if (!res) {
        last_status = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200)
        return std::vector<uint8_t>(res->body.begin(), res->body.end());
      last_status = "HTTP " + std::to_string(res->status);
      if (res->status >= 400 && res->status < 500 && res->status != 429) break;  // not retryable
    }
    throw FetchError("GET " + display_url + " failed after " + std::to_string(cfg_.retries + 1) +
                     " attempts (" + last_status + ")");
  }

  ProviderConfig cfg_;
  RateLimiter limiter_;
  std::mutex flights_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> flights_;
};

}  // namespace crimemap
