#pragma once

// Orchestration glue: turns a PipelineConfig into module calls and manages
// the artifacts a run writes under its output directory. The CLI subcommands
// are thin wrappers over these functions.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crimemap/configfile.hpp"
#include "crimemap/eval.hpp"
#include "crimemap/http_provider.hpp"
#include "crimemap/imagery.hpp"
#include "crimemap/ingest.hpp"
#include "crimemap/labeling.hpp"
#include "crimemap/mapping.hpp"
#include "crimemap/net.hpp"

namespace crimemap {

struct PipelineConfig {
  std::string city = "city";
  std::filesystem::path reports_path;
  ColumnMapping mapping;
  CategoryPolicy policy = default_violent_policy();
  GridSpec grid;
  BinMethod bin_method = BinMethod::KMeans;
  uint64_t bin_seed = 0;
  int bin_restarts = 16;
  uint64_t balance_seed = 0;
  bool provider_remote = false;  // remote requires explicit opt-in
  ProviderConfig provider;
  uint64_t texture_seed = 7;  // synthetic provider
  int zoom = 17;
  int size_px = 256;
  ArchSpec arch = ArchSpec::desk_default();
  TrainConfig train_cfg;
  SplitSpec split_spec;
  std::filesystem::path output_dir = "out";
  int render_scale = 4;
  int workers = 4;
  std::string config_hash;

  static PipelineConfig from_config(const ConfigFile& cfg) {
    PipelineConfig p;
    p.city = cfg.get_string("city", "city");
    p.reports_path = cfg.get_string("ingest.input", "");

    std::string delim = cfg.get_string("ingest.delimiter", ",");
    p.mapping.delimiter = delim == "tab" || delim == "\\t" ? '\t' : delim.at(0);
    p.mapping.has_header = cfg.get_bool("ingest.has_header", false);
    p.mapping.date_format = cfg.get_string("ingest.date_format", "%m/%d/%Y");
    auto col = [&](const std::string& key, int dflt) -> ColumnMapping::ColumnRef {
      if (!cfg.has(key)) return dflt;
      std::string v = cfg.get_string(key);
      if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos)
        return std::stoi(v);
      return v;
    };
    p.mapping.report_id = col("ingest.col.report_id", 0);
    p.mapping.date = col("ingest.col.date", 1);
    p.mapping.time = col("ingest.col.time", 2);
    p.mapping.latitude = col("ingest.col.latitude", 3);
    p.mapping.longitude = col("ingest.col.longitude", 4);
    p.mapping.category = col("ingest.col.category", 5);

    std::string mode = cfg.get_string("ingest.policy.mode", "allowlist");
    if (mode == "allowlist")
      p.policy.mode = CategoryPolicy::Mode::Allowlist;
    else if (mode == "denylist")
      p.policy.mode = CategoryPolicy::Mode::Denylist;
    else
      throw ConfigError("ingest.policy.mode must be allowlist or denylist");
    if (cfg.has("ingest.policy.categories")) {
      p.policy.categories.clear();
      std::stringstream ss(cfg.get_string("ingest.policy.categories"));
      std::string item;
      while (std::getline(ss, item, ','))
        if (!trim(item).empty()) p.policy.categories.insert(normalize_category(item));
    }

    p.grid.lat_min = cfg.get_double("grid.lat_min");
    p.grid.lat_max = cfg.get_double("grid.lat_max");
    p.grid.lon_min = cfg.get_double("grid.lon_min");
    p.grid.lon_max = cfg.get_double("grid.lon_max");
    p.grid.cell_side_m = cfg.get_double("grid.cell_side_m", 30.0);
    p.grid.validate();

    std::string method = cfg.get_string("binning.method", "kmeans");
    if (method == "kmeans")
      p.bin_method = BinMethod::KMeans;
    else if (method == "jenks")
      p.bin_method = BinMethod::Jenks;
    else
      throw ConfigError("binning.method must be kmeans or jenks");
    p.bin_seed = static_cast<uint64_t>(cfg.get_int("binning.seed", 0));
    p.bin_restarts = static_cast<int>(cfg.get_int("binning.restarts", 16));
    p.balance_seed = static_cast<uint64_t>(cfg.get_int("balance.seed", 0));

    std::string kind = cfg.get_string("provider.kind", "synthetic");
    if (kind == "http")
      p.provider_remote = true;
    else if (kind != "synthetic")
      throw ConfigError("provider.kind must be synthetic or http");
    p.provider.url_template = cfg.get_string("provider.url_template", "");
    p.provider.api_key_env = cfg.get_string("provider.api_key_env", "");
    p.provider.cache_dir = cfg.get_string("provider.cache_dir", "tile_cache");
    p.provider.rate_limit = cfg.get_double("provider.rate_limit", 10.0);
    p.provider.retries = static_cast<int>(cfg.get_int("provider.retries", 3));
    if (p.provider_remote) p.provider.validate();
    p.texture_seed = static_cast<uint64_t>(cfg.get_int("provider.texture_seed", 7));

    p.zoom = static_cast<int>(cfg.get_int("tile.zoom", 17));
    if ((p.zoom < 17 || p.zoom > 20) && !cfg.get_bool("tile.zoom_unrestricted", false))
      throw ConfigError("tile.zoom outside [17, 20]; set tile.zoom_unrestricted = true to allow");
    p.size_px = static_cast<int>(cfg.get_int("tile.size_px", 256));

    if (cfg.has("arch")) p.arch = ArchSpec::parse(cfg.get_string("arch"));

    p.train_cfg.learning_rate = cfg.get_double("train.learning_rate", 0.01);
    p.train_cfg.momentum = cfg.get_double("train.momentum", 0.9);
    p.train_cfg.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 16));
    p.train_cfg.iterations = static_cast<int>(cfg.get_int("train.iterations", 2000));
    p.train_cfg.seed = static_cast<uint64_t>(cfg.get_int("train.seed", 0));
    p.train_cfg.pretrained_lr_multiplier = cfg.get_double("train.pretrained_lr_multiplier", 0.1);
    p.train_cfg.log_every = static_cast<int>(cfg.get_int("train.log_every", 50));

    p.split_spec.test_fraction = cfg.get_double("split.test_fraction", 0.05);
    p.split_spec.repeats = static_cast<int>(cfg.get_int("split.repeats", 3));
    p.split_spec.seed = static_cast<uint64_t>(cfg.get_int("split.seed", 0));
    p.split_spec.validate();

    p.output_dir = cfg.get_string("output.dir", "out");
    p.render_scale = static_cast<int>(cfg.get_int("render.scale_px_per_cell", 4));
    p.workers = static_cast<int>(cfg.get_int("workers", 4));
    p.train_cfg.workers = p.workers;
    p.config_hash = cfg.hash();
    return p;
  }
};

// ---------------------------------------------------------------------------
// Per-step results

struct LabelingResult {
  ScoreField field;
  BinModel bins;
  std::vector<LabeledCell> all_cells;       // every grid cell, labeled
  std::vector<LabeledCell> balanced_cells;  // downsampled training set
  size_t reports_in = 0;
};

inline LabelingResult run_labeling(const PipelineConfig& cfg,
                                   const std::vector<CrimeReport>& reports) {
  LabelingResult r;
  r.reports_in = reports.size();
  r.field = score_regions(reports, cfg.grid);
  std::vector<int64_t> scores;
  scores.reserve(r.field.scores.size());
  for (const auto& s : r.field.scores) scores.push_back(s.score);
  r.bins = cfg.bin_method == BinMethod::KMeans
               ? kmeans_bins(scores, cfg.bin_seed, cfg.bin_restarts)
               : jenks_bins(scores);
  r.all_cells = assign_labels(r.field.scores, r.bins);
  r.balanced_cells = balance(r.all_cells, cfg.balance_seed);
  return r;
}

inline std::vector<CrimeReport> run_ingest(const PipelineConfig& cfg, IngestStats* stats_out) {
  std::ifstream in(cfg.reports_path);
  if (!in) throw IoError("cannot read reports file " + cfg.reports_path.string());
  auto parsed = parse_reports(in, cfg.mapping);
  auto violent = filter_violent(parsed.reports, cfg.policy);
  if (stats_out) *stats_out = summarize(parsed, violent.size());
  return violent;
}

inline std::unique_ptr<TileProvider> make_provider(const PipelineConfig& cfg,
                                                   const std::vector<Label>& official_labels) {
  if (cfg.provider_remote) return std::make_unique<HttpTileProvider>(cfg.provider);
  return std::make_unique<SyntheticTileProvider>(cfg.grid, official_labels, cfg.texture_seed);
}

inline std::vector<Label> labels_dense(const std::vector<LabeledCell>& all_cells,
                                       const GridSpec& grid) {
  std::vector<Label> dense(grid.n_cells(), Label::Low);
  for (const auto& c : all_cells)
    dense[static_cast<size_t>(c.cell.row) * grid.n_cols() + c.cell.col] = c.label;
  return dense;
}

// labels.tsv: cell id, center lat/lon, score, label.
inline void write_labels_file(const std::filesystem::path& path,
                              const std::vector<LabeledCell>& cells, const GridSpec& grid) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& c : cells) {
    auto [lat, lon] = cell_center(c.cell, grid);
    out << c.cell.str() << '\t' << format_coord(lat) << '\t' << format_coord(lon) << '\t'
        << c.score << '\t' << label_name(c.label) << '\n';
  }
}

inline std::vector<LabeledCell> read_labels_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read labels file " + path.string());
  std::vector<LabeledCell> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string cell_s, lat_s, lon_s, score_s, label_s;
    if (!std::getline(ls, cell_s, '\t') || !std::getline(ls, lat_s, '\t') ||
        !std::getline(ls, lon_s, '\t') || !std::getline(ls, score_s, '\t') ||
        !std::getline(ls, label_s))
      throw IoError("labels file: malformed line '" + line + "'");
    LabeledCell c;
    size_t cpos = cell_s.find('c');
    c.cell.row = std::stoi(cell_s.substr(1, cpos - 1));
    c.cell.col = std::stoi(cell_s.substr(cpos + 1));
    c.score = std::stoll(score_s);
    c.label = label_from_name(label_s);
    cells.push_back(c);
  }
  return cells;
}

// bins.cfg: the BinModel as a dotted-key config block.
inline void write_bin_model(const std::filesystem::path& path, const BinModel& m) {
  std::ofstream out(path, std::ios::binary);
  out << "binning.method = " << (m.method == BinMethod::KMeans ? "kmeans" : "jenks") << "\n";
  char buf[64];
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", m.centroids[i]);
    out << "binning.centroid_" << i << " = " << buf << "\n";
  }
  for (int i = 0; i < 2; ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", m.boundaries[i]);
    out << "binning.boundary_" << i << " = " << buf << "\n";
  }
  out << "binning.seed = " << m.seed << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path,
                            const std::vector<ManifestEntry>& entries, const Shape3& input_shape) {
  Dataset data;
  data.input_shape = input_shape;
  auto base = manifest_path.parent_path();
  for (const auto& e : entries) {
    Image tile = read_png(base / e.tile_path, 3);
    data.inputs.push_back(preprocess_tile(tile, input_shape));
    data.labels.push_back(static_cast<int>(e.label));
  }
  return data;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path,
                            const Shape3& input_shape) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot read manifest " + manifest_path.string());
  return load_dataset(manifest_path, read_manifest(mf), input_shape);
}

inline void write_train_log(const std::filesystem::path& path,
                            const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path, std::ios::binary);
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.4f", e.iteration, e.loss, e.train_accuracy);
    out << buf << '\n';
  }
}

inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
  {
    std::ofstream out(dir / "eval_report.txt", std::ios::binary);
    print_report(out, r);
  }
  nlohmann::json j;
  j["split_accuracies"] = r.split_accuracies;
  j["mean_accuracy"] = r.mean_accuracy;
  std::vector<size_t> flat;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) flat.push_back(r.confusion_total[i][k]);
  j["confusion_row_major"] = flat;
  std::ofstream out(dir / "eval_report.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

// Combined plus three per-label layers, GeoJSON and PNG, named
// {city}_{provenance}_{label|all}.{geojson,png}.
inline std::vector<std::filesystem::path> write_map_outputs(const std::filesystem::path& dir,
                                                            const std::string& city,
                                                            const CityMap& map, int render_scale) {
  std::string prov = map.provenance == Provenance::Official ? "official" : "predicted";
  std::vector<std::filesystem::path> written;
  auto emit_geojson = [&](std::optional<MapLabel> only, const std::string& layer) {
    auto path = dir / (city + "_" + prov + "_" + layer + ".geojson");
    std::ofstream out(path, std::ios::binary);
    out << render_geojson(map, only).dump(2) << "\n";
    written.push_back(path);
  };
  emit_geojson(std::nullopt, "all");
  emit_geojson(MapLabel::Low, "low");
  emit_geojson(MapLabel::Neutral, "neutral");
  emit_geojson(MapLabel::High, "high");
  auto png_path = dir / (city + "_" + prov + "_all.png");
  write_png(png_path, render_png(map, Palette{}, render_scale));
  written.push_back(png_path);
  return written;
}

// run_manifest.json: inputs, config hash and produced artifacts, written at
// the end of every successful subcommand.
inline void write_run_manifest(const PipelineConfig& cfg, const std::string& subcommand,
                               const std::vector<std::filesystem::path>& inputs,
                               const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["city"] = cfg.city;
  j["config_hash"] = cfg.config_hash;
  std::vector<std::string> in_s, out_s;
  for (const auto& p : inputs) in_s.push_back(p.string());
  for (const auto& p : outputs) out_s.push_back(p.lexically_relative(cfg.output_dir).string());
  std::sort(out_s.begin(), out_s.end());
  j["inputs"] = in_s;
  j["outputs"] = out_s;
  std::ofstream out(cfg.output_dir / "run_manifest.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

}  // namespace crimemap
