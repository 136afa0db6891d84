#pragma once

// Per-cell crime counts, three-level binning (1-D weighted k-means or exact
// Jenks natural breaks) and class balancing by downsampling.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/geo.hpp"
#include "crimemap/ingest.hpp"

namespace crimemap {

enum class Label : uint8_t { Low = 0, Neutral = 1, High = 2 };

inline const char* label_name(Label l) {
  switch (l) {
    case Label::Low:
      return "Low";
    case Label::Neutral:
      return "Neutral";
    case Label::High:
      return "High";
  }
  return "?";
}

inline Label label_from_name(std::string_view s) {
  std::string n = to_lower(trim(s));
  if (n == "low") return Label::Low;
  if (n == "neutral") return Label::Neutral;
  if (n == "high") return Label::High;
  throw ConfigError("unknown label: '" + std::string(s) + "'");
}

struct CellScore {
  CellId cell;
  int64_t score = 0;  // crime count inside the cell
};

struct ScoreField {
  std::vector<CellScore> scores;  // dense, row-major over the grid, zeros included
  size_t outside_bbox = 0;        // reports that fell outside the grid bbox
};

// Counts reports per grid cell. Sum of scores equals the in-bbox report count
// exactly.
inline ScoreField score_regions(const std::vector<CrimeReport>& reports, const GridSpec& grid) {
  grid.validate();
  ScoreField field;
  int rows = grid.n_rows(), cols = grid.n_cols();
  field.scores.resize(grid.n_cells());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      field.scores[static_cast<size_t>(r) * cols + c].cell = CellId{r, c};
  for (const auto& rep : reports) {
    auto id = cell_index(rep.latitude, rep.longitude, grid);
    if (!id) {
      ++field.outside_bbox;
      continue;
    }
    ++field.scores[static_cast<size_t>(id->row) * cols + id->col].score;
  }
  return field;
}

enum class BinMethod { KMeans, Jenks };

struct BinModel {
  BinMethod method = BinMethod::KMeans;
  std::array<double, 3> centroids{};   // strictly ascending
  std::array<double, 2> boundaries{};  // ascending; score on a boundary -> upper bin
  uint64_t seed = 0;                   // k-means only

  Label assign(double score) const {
    if (score < boundaries[0]) return Label::Low;
    if (score < boundaries[1]) return Label::Neutral;
    return Label::High;
  }
};

namespace detail {

struct WeightedValues {
  std::vector<double> value;   // ascending, distinct
  std::vector<double> weight;  // frequency of each value
};

inline WeightedValues compress_scores(const std::vector<int64_t>& scores) {
  std::map<int64_t, size_t> freq;
  for (int64_t s : scores) ++freq[s];
  WeightedValues wv;
  for (const auto& [v, n] : freq) {
    wv.value.push_back(static_cast<double>(v));
    wv.weight.push_back(static_cast<double>(n));
  }
  return wv;
}

// Weighted within-cluster sum of squares for one contiguous range [lo, hi).
inline double range_wcss(const WeightedValues& wv, size_t lo, size_t hi) {
  double w = 0.0, mean = 0.0;
  for (size_t i = lo; i < hi; ++i) {
    w += wv.weight[i];
    mean += wv.weight[i] * wv.value[i];
  }
  mean /= w;
  double ss = 0.0;
  for (size_t i = lo; i < hi; ++i)
    ss += wv.weight[i] * (wv.value[i] - mean) * (wv.value[i] - mean);
  return ss;
}

inline double range_mean(const WeightedValues& wv, size_t lo, size_t hi) {
  double w = 0.0, mean = 0.0;
  for (size_t i = lo; i < hi; ++i) {
    w += wv.weight[i];
    mean += wv.weight[i] * wv.value[i];
  }
  return mean / w;
}

}  // namespace detail

// 1-D Lloyd's algorithm with seeded k-means++ initialization on the
// frequency-weighted distinct score values; the best of `restarts` runs by
// within-cluster sum of squares wins. Labels are ordered by ascending
// centroid, so Low means the lowest crime counts.
inline BinModel kmeans_bins(const std::vector<int64_t>& scores, uint64_t seed, int restarts = 16) {
  auto wv = detail::compress_scores(scores);
  const size_t n = wv.value.size();
  if (n < 3) throw DegenerateInputError("kmeans_bins: need at least 3 distinct score values");

  Rng rng = make_rng(seed, /*stream=*/0x6b6d65616e73ull);
  std::array<double, 3> best_centroids{};
  double best_wcss = std::numeric_limits<double>::infinity();

  double total_weight = std::accumulate(wv.weight.begin(), wv.weight.end(), 0.0);

  for (int restart = 0; restart < restarts; ++restart) {
    // k-means++ seeding over the weighted values.
    std::array<double, 3> c{};
    {
      double pick = rand_unit(rng) * total_weight;
      size_t i = 0;
      for (double acc = wv.weight[0]; i + 1 < n && acc < pick; acc += wv.weight[++i]) {
      }
      c[0] = wv.value[i];
      std::vector<double> d2(n);
      for (int k = 1; k < 3; ++k) {
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
          double dmin = std::numeric_limits<double>::infinity();
          for (int m = 0; m < k; ++m)
            dmin = std::min(dmin, (wv.value[j] - c[m]) * (wv.value[j] - c[m]));
          d2[j] = dmin * wv.weight[j];
          sum += d2[j];
        }
        if (sum <= 0.0) {
          // All mass already on chosen centroids; spread to unused values.
          for (size_t j = 0; j < n; ++j) {
            bool used = false;
            for (int m = 0; m < k; ++m) used |= wv.value[j] == c[m];
            if (!used) {
              c[k] = wv.value[j];
              break;
            }
          }
          continue;
        }
        double pick2 = rand_unit(rng) * sum;
        size_t j = 0;
        for (double acc = d2[0]; j + 1 < n && acc < pick2; acc += d2[++j]) {
        }
        c[k] = wv.value[j];
      }
      std::sort(c.begin(), c.end());
    }

    // Lloyd iterations; exact convergence (zero centroid movement) in 1-D.
    std::vector<int> owner(n);
    for (int iter = 0; iter < 1000; ++iter) {
      for (size_t j = 0; j < n; ++j) {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int m = 0; m < 3; ++m) {
          double d = (wv.value[j] - c[m]) * (wv.value[j] - c[m]);
          if (d < bd) {
            bd = d;
            best = m;
          }
        }
        owner[j] = best;
      }
      std::array<double, 3> sum{}, w{};
      for (size_t j = 0; j < n; ++j) {
        sum[owner[j]] += wv.weight[j] * wv.value[j];
        w[owner[j]] += wv.weight[j];
      }
      bool moved = false;
      for (int m = 0; m < 3; ++m) {
        double nc;
        if (w[m] > 0.0) {
          nc = sum[m] / w[m];
        } else {
          // Empty cluster: restart it at the value farthest from its centroid.
          size_t far_j = 0;
          double far_d = -1.0;
          for (size_t j = 0; j < n; ++j) {
            double d = (wv.value[j] - c[m]) * (wv.value[j] - c[m]) * wv.weight[j];
            if (d > far_d) {
              far_d = d;
              far_j = j;
            }
          }
          nc = wv.value[far_j];
        }
        if (nc != c[m]) moved = true;
        c[m] = nc;
      }
      std::sort(c.begin(), c.end());
      if (!moved) break;
    }

    double wcss = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double dmin = std::numeric_limits<double>::infinity();
      for (int m = 0; m < 3; ++m)
        dmin = std::min(dmin, (wv.value[j] - c[m]) * (wv.value[j] - c[m]));
      wcss += dmin * wv.weight[j];
    }
    if (wcss < best_wcss) {
      best_wcss = wcss;
      best_centroids = c;
    }
  }

  if (!(best_centroids[0] < best_centroids[1] && best_centroids[1] < best_centroids[2]))
    throw DegenerateInputError("kmeans_bins: centroids collapsed; scores too concentrated");

  BinModel model;
  model.method = BinMethod::KMeans;
  model.centroids = best_centroids;
  model.boundaries = {(best_centroids[0] + best_centroids[1]) / 2.0,
                      (best_centroids[1] + best_centroids[2]) / 2.0};
  model.seed = seed;
  return model;
}

// Exact Jenks natural breaks: dynamic-programming minimization of
// within-class sum of squared deviations over contiguous classes of the
// sorted distinct values. Deterministic, no seed.
inline BinModel jenks_bins(const std::vector<int64_t>& scores) {
  auto wv = detail::compress_scores(scores);
  const size_t n = wv.value.size();
  if (n < 3) throw DegenerateInputError("jenks_bins: need at least 3 distinct score values");

  // Prefix sums for O(1) range WCSS.
  std::vector<double> pw(n + 1, 0.0), pwx(n + 1, 0.0), pwx2(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    pw[i + 1] = pw[i] + wv.weight[i];
    pwx[i + 1] = pwx[i] + wv.weight[i] * wv.value[i];
    pwx2[i + 1] = pwx2[i] + wv.weight[i] * wv.value[i] * wv.value[i];
  }
  auto wcss = [&](size_t lo, size_t hi) {  // [lo, hi)
    double w = pw[hi] - pw[lo];
    double sx = pwx[hi] - pwx[lo];
    double sx2 = pwx2[hi] - pwx2[lo];
    return std::max(0.0, sx2 - sx * sx / w);
  };

  // Split points: class 0 = [0,a), class 1 = [a,b), class 2 = [b,n).
  double best = std::numeric_limits<double>::infinity();
  size_t best_a = 1, best_b = 2;
  for (size_t a = 1; a + 1 < n; ++a) {
    double c0 = wcss(0, a);
    for (size_t b = a + 1; b < n; ++b) {
      double obj = c0 + wcss(a, b) + wcss(b, n);
      if (obj < best) {
        best = obj;
        best_a = a;
        best_b = b;
      }
    }
  }

  BinModel model;
  model.method = BinMethod::Jenks;
  model.centroids = {detail::range_mean(wv, 0, best_a), detail::range_mean(wv, best_a, best_b),
                     detail::range_mean(wv, best_b, n)};
  // Class break strictly between the adjacent class extremes.
  model.boundaries = {(wv.value[best_a - 1] + wv.value[best_a]) / 2.0,
                      (wv.value[best_b - 1] + wv.value[best_b]) / 2.0};
  return model;
}

// Within-cluster sum of squares a BinModel achieves on a score multiset, for
// comparing binning routes.
inline double binning_objective(const BinModel& model, const std::vector<int64_t>& scores) {
  double wcss = 0.0;
  for (int64_t s : scores) {
    double v = static_cast<double>(s);
    double d = v - model.centroids[static_cast<int>(model.assign(v))];
    wcss += d * d;
  }
  return wcss;
}

struct LabeledCell {
  CellId cell;
  int64_t score = 0;
  Label label = Label::Low;

  bool operator==(const LabeledCell&) const = default;
};

inline std::vector<LabeledCell> assign_labels(const std::vector<CellScore>& scores,
                                              const BinModel& model) {
  std::vector<LabeledCell> out;
  out.reserve(scores.size());
  for (const auto& s : scores)
    out.push_back({s.cell, s.score, model.assign(static_cast<double>(s.score))});
  return out;
}

// Downsamples majority classes to the minority-class count via seeded uniform
// sampling without replacement; original order of retained cells preserved.
inline std::vector<LabeledCell> balance(const std::vector<LabeledCell>& cells, uint64_t seed) {
  std::array<std::vector<size_t>, 3> by_class;
  for (size_t i = 0; i < cells.size(); ++i)
    by_class[static_cast<int>(cells[i].label)].push_back(i);
  size_t minority = std::numeric_limits<size_t>::max();
  for (int k = 0; k < 3; ++k) {
    if (by_class[k].empty())
      throw DegenerateInputError(std::string("balance: class ") + label_name(Label(k)) +
                                 " is empty");
    minority = std::min(minority, by_class[k].size());
  }
  std::vector<bool> keep(cells.size(), false);
  for (int k = 0; k < 3; ++k) {
    Rng rng = make_rng(seed, 0xba1a0000ull + static_cast<uint64_t>(k));
    auto chosen = sample_without_replacement(by_class[k].size(), minority, rng);
    for (size_t j : chosen) keep[by_class[k][j]] = true;
  }
  std::vector<LabeledCell> out;
  out.reserve(minority * 3);
  for (size_t i = 0; i < cells.size(); ++i)
    if (keep[i]) out.push_back(cells[i]);
  return out;
}

}  // namespace crimemap
