#pragma once

// Independent reference implementations used to check the library: these are
// written in the most straightforward way possible and share no code with the
// implementations under test.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crimemap/geo.hpp"
#include "crimemap/labeling.hpp"
#include "crimemap/net.hpp"

namespace oracles {

// Web-Mercator via the asinh form, in extended precision.
inline std::pair<long double, long double> ref_world(long double lat_deg, long double lon_deg) {
  const long double pi = 3.14159265358979323846264338327950288L;
  long double x = (lon_deg + 180.0L) / 360.0L;
  long double y = 0.5L - std::asinh(std::tan(lat_deg * pi / 180.0L)) / (2.0L * pi);
  return {x, y};
}

// Point-in-rectangle scan over every cell; half-open edges with the top/right
// bbox edge closed, mirroring the documented indexing contract.
inline std::optional<crimemap::CellId> brute_force_cell(double lat, double lon,
                                                        const crimemap::GridSpec& grid) {
  if (lat < grid.lat_min || lat > grid.lat_max || lon < grid.lon_min || lon > grid.lon_max)
    return std::nullopt;
  int rows = grid.n_rows(), cols = grid.n_cols();
  double dlat = grid.dlat(), dlon = grid.dlon();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double lo_lat = grid.lat_min + r * dlat;
      double hi_lat = grid.lat_min + (r + 1) * dlat;
      double lo_lon = grid.lon_min + c * dlon;
      double hi_lon = grid.lon_min + (c + 1) * dlon;
      bool in_lat = lat >= lo_lat && (lat < hi_lat || r == rows - 1);
      bool in_lon = lon >= lo_lon && (lon < hi_lon || c == cols - 1);
      if (in_lat && in_lon) return crimemap::CellId{r, c};
    }
  return std::nullopt;
}

// Exhaustive minimum within-cluster sum of squares over all contiguous
// 3-partitions of the sorted distinct values (optimal 1-D 3-clusterings are
// contiguous in sorted order).
inline double exhaustive_best_wcss(const std::vector<int64_t>& scores) {
  std::map<int64_t, double> freq;
  for (int64_t s : scores) freq[s] += 1.0;
  std::vector<double> v, w;
  for (auto& [val, n] : freq) {
    v.push_back(static_cast<double>(val));
    w.push_back(n);
  }
  size_t n = v.size();
  auto wcss = [&](size_t lo, size_t hi) {
    double tw = 0, mean = 0;
    for (size_t i = lo; i < hi; ++i) {
      tw += w[i];
      mean += w[i] * v[i];
    }
    mean /= tw;
    double ss = 0;
    for (size_t i = lo; i < hi; ++i) ss += w[i] * (v[i] - mean) * (v[i] - mean);
    return ss;
  };
  double best = std::numeric_limits<double>::infinity();
  for (size_t a = 1; a + 1 < n; ++a)
    for (size_t b = a + 1; b < n; ++b)
      best = std::min(best, wcss(0, a) + wcss(a, b) + wcss(b, n));
  return best;
}

// Objective a BinModel achieves on the multiset, measured independently of
// crimemap::binning_objective.
inline double model_wcss(const crimemap::BinModel& m, const std::vector<int64_t>& scores) {
  double ss = 0;
  for (int64_t s : scores) {
    double x = static_cast<double>(s);
    double best = std::numeric_limits<double>::infinity();
    int k = x < m.boundaries[0] ? 0 : (x < m.boundaries[1] ? 1 : 2);
    best = (x - m.centroids[k]) * (x - m.centroids[k]);
    ss += best;
  }
  return ss;
}

// ---------------------------------------------------------------------------
// Naive layer-by-layer forward pass (double precision), structured completely
// differently from the engine: explicit 3-D indexing everywhere.

using Tensor = std::vector<double>;

inline double at3(const Tensor& t, int C, int H, int W, int c, int y, int x) {
  (void)C;
  return t[(static_cast<size_t>(c) * H + y) * W + x];
}

inline Tensor ref_conv(const Tensor& in, int C, int H, int W, const std::vector<float>& wts,
                       const std::vector<float>& bias, int F, int K, int S, int P, int& oh,
                       int& ow) {
  oh = (H + 2 * P - K) / S + 1;
  ow = (W + 2 * P - K) / S + 1;
  Tensor out(static_cast<size_t>(F) * oh * ow, 0.0);
  for (int f = 0; f < F; ++f)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = bias[f];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              int iy = y * S - P + ky, ix = x * S - P + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              double wv = wts[((static_cast<size_t>(f) * C + c) * K + ky) * K + kx];
              acc += wv * at3(in, C, H, W, c, iy, ix);
            }
        out[(static_cast<size_t>(f) * oh + y) * ow + x] = acc;
      }
  return out;
}

inline Tensor ref_pool(const Tensor& in, int C, int H, int W, int window, int stride, int& oh,
                       int& ow) {
  oh = (H - window) / stride + 1;
  ow = (W - window) / stride + 1;
  Tensor out(static_cast<size_t>(C) * oh * ow);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        for (int py = 0; py < window; ++py)
          for (int px = 0; px < window; ++px) {
            int iy = y * stride + py, ix = x * stride + px;
            if (iy >= H || ix >= W) continue;
            best = std::max(best, at3(in, C, H, W, c, iy, ix));
          }
        out[(static_cast<size_t>(c) * oh + y) * ow + x] = best;
      }
  return out;
}

inline Tensor ref_dense(const Tensor& in, const std::vector<float>& wts,
                        const std::vector<float>& bias, int units) {
  Tensor out(units);
  for (int u = 0; u < units; ++u) {
    double acc = bias[u];
    for (size_t j = 0; j < in.size(); ++j) acc += static_cast<double>(wts[u * in.size() + j]) * in[j];
    out[u] = acc;
  }
  return out;
}

inline Tensor ref_forward(const crimemap::ModelParams& p, const std::vector<double>& input) {
  using crimemap::LayerKind;
  Tensor act = input;
  int C = p.arch.in_c, H = p.arch.in_h, W = p.arch.in_w;
  for (size_t i = 0; i < p.arch.layers.size(); ++i) {
    const auto& l = p.arch.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        int oh, ow;
        act = ref_conv(act, C, H, W, p.layers[i].weights, p.layers[i].biases, l.filters, l.kernel,
                       l.stride, l.pad, oh, ow);
        C = l.filters;
        H = oh;
        W = ow;
        break;
      }
      case LayerKind::ReLU:
        for (double& v : act) v = std::max(0.0, v);
        break;
      case LayerKind::MaxPool: {
        int oh, ow;
        act = ref_pool(act, C, H, W, l.pool, l.pool_stride, oh, ow);
        H = oh;
        W = ow;
        break;
      }
      case LayerKind::Flatten:
        C = static_cast<int>(act.size());
        H = W = 1;
        break;
      case LayerKind::Dense:
      case LayerKind::SoftmaxOutput:
        act = ref_dense(act, p.layers[i].weights, p.layers[i].biases, l.units);
        C = l.units;
        H = W = 1;
        break;
    }
  }
  double m = *std::max_element(act.begin(), act.end());
  double sum = 0;
  for (double& v : act) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : act) v /= sum;
  return act;
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check, 64-bit engine. Returns the worst
// relative error over all parameters (subsampled above `max_checks` per
// tensor).

inline double gradient_check(const crimemap::ModelParams& params, const std::vector<double>& input,
                             int label, size_t max_checks = 64, double eps = 1e-3) {
  using namespace crimemap;
  Network<double> net(params);
  GradientBuffers<double> grads(net);
  grads.match(net);
  auto ws = net.make_workspace();
  net.loss_backward(input, label, ws, grads.gw, grads.gb);

  auto loss_at = [&]() {
    auto probs = net.forward(input, ws);
    return -std::log(std::max(probs[label], 1e-12));
  };

  double worst = 0.0;
  auto check_tensor = [&](std::vector<double>& tensor, const std::vector<double>& analytic) {
    size_t n = tensor.size();
    size_t step = n <= max_checks ? 1 : n / max_checks;
    for (size_t j = 0; j < n; j += step) {
      double orig = tensor[j];
      tensor[j] = orig + eps;
      double lp = loss_at();
      tensor[j] = orig - eps;
      double lm = loss_at();
      tensor[j] = orig;
      double fd = (lp - lm) / (2.0 * eps);
      double a = analytic[j];
      if (std::abs(fd) < 1e-7 && std::abs(a) < 1e-7) continue;
      worst = std::max(worst, std::abs(fd - a) / std::max(std::abs(fd), std::abs(a)));
    }
  };
  for (size_t i = 0; i < net.num_layers(); ++i) {
    check_tensor(net.weights()[i], grads.gw[i]);
    check_tensor(net.biases()[i], grads.gb[i]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// GeoJSON structural validation (RFC 7946 subset for FeatureCollections of
// Polygons).

inline bool valid_position(const nlohmann::json& pos, std::string& why) {
  if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number()) {
    why = "position must be [lon, lat]";
    return false;
  }
  double lon = pos[0].get<double>(), lat = pos[1].get<double>();
  if (lon < -180.0 || lon > 180.0 || lat < -90.0 || lat > 90.0) {
    why = "position out of range";
    return false;
  }
  return true;
}

inline bool validate_geojson(const nlohmann::json& j, std::string& why) {
  if (!j.is_object() || j.value("type", "") != "FeatureCollection") {
    why = "root must be a FeatureCollection";
    return false;
  }
  if (!j.contains("features") || !j["features"].is_array()) {
    why = "missing features array";
    return false;
  }
  for (const auto& f : j["features"]) {
    if (f.value("type", "") != "Feature") {
      why = "feature type";
      return false;
    }
    if (!f.contains("properties") || !f["properties"].is_object()) {
      why = "feature properties";
      return false;
    }
    const auto& g = f["geometry"];
    if (!g.is_object() || g.value("type", "") != "Polygon") {
      why = "geometry must be Polygon";
      return false;
    }
    const auto& coords = g["coordinates"];
    if (!coords.is_array() || coords.empty()) {
      why = "polygon coordinates";
      return false;
    }
    for (const auto& ring : coords) {
      if (!ring.is_array() || ring.size() < 4) {
        why = "ring needs at least 4 positions";
        return false;
      }
      for (const auto& pos : ring)
        if (!valid_position(pos, why)) return false;
      if (ring.front() != ring.back()) {
        why = "ring not closed";
        return false;
      }
    }
  }
  return true;
}

}  // namespace oracles
