#pragma once

// Seeded synthetic-city generator used by offline runs and the test suite:
// plants a three-tier score field over a grid (smooth hotspot layout) and
// emits crime reports consistent with it, plus a sprinkle of non-violent
// reports that ingest filtering should drop.

#include <string>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/geo.hpp"
#include "crimemap/ingest.hpp"
#include "crimemap/labeling.hpp"

namespace crimemap {

struct SynthCitySpec {
  GridSpec grid;
  uint64_t layout_seed = 0;
  double frac_high = 0.25;
  double frac_neutral = 0.35;
};

struct SynthCity {
  std::vector<CrimeReport> reports;  // shuffled; includes non-violent noise rows
  std::vector<Label> planted;        // per-cell tier, dense row-major
};

// Hotspot intensity field -> tier by quantile -> well-separated per-tier
// score ranges (0-3, 20-28, 70-90) so three-bin clustering recovers the
// planted tiers exactly.
inline SynthCity generate_synth_city(const SynthCitySpec& spec) {
  spec.grid.validate();
  const int rows = spec.grid.n_rows(), cols = spec.grid.n_cols();
  const size_t n = spec.grid.n_cells();
  Rng rng = make_rng(spec.layout_seed, 0xc17full);

  // Smooth intensity field from a handful of Gaussian hotspots.
  int hotspots = 3 + static_cast<int>(rand_below(rng, 3));
  std::vector<double> cx(hotspots), cy(hotspots), sigma(hotspots), amp(hotspots);
  for (int h = 0; h < hotspots; ++h) {
    cx[h] = rand_unit(rng) * cols;
    cy[h] = rand_unit(rng) * rows;
    sigma[h] = (0.08 + 0.12 * rand_unit(rng)) * std::max(rows, cols);
    amp[h] = 0.5 + rand_unit(rng);
  }
  std::vector<double> intensity(n);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double v = 0.0;
      for (int h = 0; h < hotspots; ++h) {
        double dx = (c + 0.5 - cx[h]) / sigma[h];
        double dy = (r + 0.5 - cy[h]) / sigma[h];
        v += amp[h] * std::exp(-(dx * dx + dy * dy) / 2.0);
      }
      intensity[static_cast<size_t>(r) * cols + c] = v;
    }

  // Tier by quantile of the intensity field.
  std::vector<double> sorted = intensity;
  std::sort(sorted.begin(), sorted.end());
  double thr_high = sorted[static_cast<size_t>((1.0 - spec.frac_high) * (n - 1))];
  double thr_neutral =
      sorted[static_cast<size_t>((1.0 - spec.frac_high - spec.frac_neutral) * (n - 1))];

  SynthCity city;
  city.planted.resize(n);
  std::vector<int> score(n);
  for (size_t i = 0; i < n; ++i) {
    if (intensity[i] > thr_high) {
      city.planted[i] = Label::High;
      score[i] = 70 + static_cast<int>(rand_below(rng, 21));
    } else if (intensity[i] > thr_neutral) {
      city.planted[i] = Label::Neutral;
      score[i] = 20 + static_cast<int>(rand_below(rng, 9));
    } else {
      city.planted[i] = Label::Low;
      score[i] = static_cast<int>(rand_below(rng, 4));
    }
  }

  static const char* violent[] = {"Homicide", "Assault", "Battery", "Robbery", "Arson"};
  static const char* nonviolent[] = {"Theft", "Fraud"};
  size_t next_id = 1;
  auto add_report = [&](const CellId& cell, const char* category) {
    BBox bb = cell_bbox(cell, spec.grid);
    CrimeReport rep;
    rep.report_id = std::to_string(next_id++);
    rep.date = {2016, 1 + static_cast<int>(rand_below(rng, 12)),
                1 + static_cast<int>(rand_below(rng, 28))};
    rep.time = TimeOfDay{static_cast<int>(rand_below(rng, 24)),
                         static_cast<int>(rand_below(rng, 60))};
    // Strictly interior so the report lands in its cell under any edge rule.
    rep.latitude = bb.lat_min + (0.05 + 0.9 * rand_unit(rng)) * (bb.lat_max - bb.lat_min);
    rep.longitude = bb.lon_min + (0.05 + 0.9 * rand_unit(rng)) * (bb.lon_max - bb.lon_min);
    rep.category = category;
    city.reports.push_back(std::move(rep));
  };

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      CellId cell{r, c};
      size_t i = static_cast<size_t>(r) * cols + c;
      for (int k = 0; k < score[i]; ++k)
        add_report(cell, violent[rand_below(rng, std::size(violent))]);
      int noise = static_cast<int>(rand_below(rng, 3));
      for (int k = 0; k < noise; ++k)
        add_report(cell, nonviolent[rand_below(rng, std::size(nonviolent))]);
    }

  shuffle_inplace(city.reports, rng);
  return city;
}

}  // namespace crimemap
