// crimemap: command-line front end for the crime-rate mapping pipeline.
// Subcommands compose the pipeline stages; all of them are driven by a
// dotted-key config file, with --set overrides. Logs go to stderr, data
// artifacts to files under output.dir.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "crimemap/pipeline.hpp"
#include "crimemap/synthcity.hpp"

namespace fs = std::filesystem;
using namespace crimemap;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Pipeline config file (dotted keys)")
      ->required();
  cmd->add_option("--set", args.overrides, "Override a config value, key=value (repeatable)");
  cmd->add_option("--workers", args.workers, "Cap all worker pools (overrides config)");
}

PipelineConfig load_config(const CommonArgs& args) {
  ConfigFile cfg = ConfigFile::load(args.config_path);
  for (const auto& o : args.overrides) {
    size_t eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  PipelineConfig p = PipelineConfig::from_config(cfg);
  if (args.workers > 0) {
    p.workers = args.workers;
    p.train_cfg.workers = args.workers;
  }
  // More workers than cores just adds scheduler thrash.
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw > 0 && p.workers > hw) {
    p.workers = hw;
    p.train_cfg.workers = hw;
  }
  fs::create_directories(p.output_dir);
  return p;
}

void log_stats(const IngestStats& s) {
  std::cerr << "ingest: rows_read=" << s.rows_read << " rows_parsed=" << s.rows_parsed
            << " rows_rejected=" << s.rows_rejected << " rows_after_filter=" << s.rows_after_filter
            << "\n";
  for (const auto& [reason, n] : s.rejection_reasons)
    std::cerr << "ingest: rejected " << n << " rows: " << reason << "\n";
}

// ---------------------------------------------------------------------------
// Steps shared between subcommands

struct LabeledArtifacts {
  LabelingResult labeling;
  std::vector<Label> official_dense;
};

LabeledArtifacts ingest_and_label(const PipelineConfig& cfg) {
  IngestStats stats;
  auto reports = run_ingest(cfg, &stats);
  log_stats(stats);
  if (reports.empty()) throw DegenerateInputError("no reports after filtering; nothing to label");
  LabeledArtifacts art;
  art.labeling = run_labeling(cfg, reports);
  art.official_dense = labels_dense(art.labeling.all_cells, cfg.grid);
  std::cerr << "label: " << art.labeling.all_cells.size() << " cells, balanced to "
            << art.labeling.balanced_cells.size() << " (" << art.labeling.field.outside_bbox
            << " reports outside bbox)\n";
  return art;
}

std::vector<fs::path> write_label_artifacts(const PipelineConfig& cfg,
                                            const LabeledArtifacts& art) {
  write_labels_file(cfg.output_dir / "labels.tsv", art.labeling.all_cells, cfg.grid);
  write_labels_file(cfg.output_dir / "labels_balanced.tsv", art.labeling.balanced_cells, cfg.grid);
  write_bin_model(cfg.output_dir / "bins.cfg", art.labeling.bins);
  return {cfg.output_dir / "labels.tsv", cfg.output_dir / "labels_balanced.tsv",
          cfg.output_dir / "bins.cfg"};
}

std::vector<fs::path> build_tiles(const PipelineConfig& cfg, const LabeledArtifacts& art) {
  auto provider = make_provider(cfg, art.official_dense);
  auto result = build_dataset(art.labeling.balanced_cells, *provider, cfg.grid, cfg.zoom,
                              cfg.size_px, cfg.output_dir / "dataset");
  std::cerr << "fetch: " << result.entries.size() << " tiles written, "
            << result.failures.size() << " failures\n";
  for (const auto& [cell, why] : result.failures)
    std::cerr << "fetch: failed " << cell.str() << ": " << why << "\n";
  return {cfg.output_dir / "dataset" / "manifest.tsv"};
}

std::vector<fs::path> train_model(const PipelineConfig& cfg, const ModelParams& init) {
  Dataset data = load_dataset(cfg.output_dir / "dataset" / "manifest.tsv",
                              cfg.arch.chain().front());
  auto result = train(init, data, cfg.train_cfg);
  save_params(result.params, cfg.output_dir / "model.bin");
  write_train_log(cfg.output_dir / "train_log.tsv", result.log);
  if (!result.log.empty())
    std::cerr << "train: final loss " << result.log.back().loss << ", batch accuracy "
              << result.log.back().train_accuracy << "\n";
  return {cfg.output_dir / "model.bin", cfg.output_dir / "train_log.tsv"};
}

std::vector<fs::path> run_eval(const PipelineConfig& cfg) {
  Dataset data = load_dataset(cfg.output_dir / "dataset" / "manifest.tsv",
                              cfg.arch.chain().front());
  EvalReport report = cross_validate(data, cfg.arch, cfg.split_spec, cfg.train_cfg);
  write_eval_report(cfg.output_dir, report);
  print_report(std::cerr, report);
  return {cfg.output_dir / "eval_report.txt", cfg.output_dir / "eval_report.json"};
}

std::vector<fs::path> run_predict_map(const PipelineConfig& cfg, const fs::path& model_path,
                                      const LabeledArtifacts& art, double* accuracy_out) {
  ModelParams params = load_params(model_path);
  auto provider = make_provider(cfg, art.official_dense);
  CityMap predicted =
      predict_map(params, *provider, cfg.grid, cfg.zoom, cfg.size_px, 0.01, cfg.workers);
  predicted.source_id = model_path.filename().string();
  CityMap official = official_map(art.labeling.all_cells, cfg.grid);
  auto acc = map_accuracy(predicted, official);
  std::cerr << "predict-map: map accuracy vs official " << acc.accuracy << " over "
            << acc.compared << " cells\n";
  if (accuracy_out) *accuracy_out = acc.accuracy;
  auto outputs = write_map_outputs(cfg.output_dir, cfg.city, predicted, cfg.render_scale);
  auto official_outputs = write_map_outputs(cfg.output_dir, cfg.city, official, cfg.render_scale);
  outputs.insert(outputs.end(), official_outputs.begin(), official_outputs.end());
  {
    std::ofstream out(cfg.output_dir / "map_accuracy.txt", std::ios::binary);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f\n", acc.accuracy);
    out << buf;
  }
  outputs.push_back(cfg.output_dir / "map_accuracy.txt");
  return outputs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crimemap: three-level crime-rate maps predicted from satellite tiles"};
  app.require_subcommand(1);

  CommonArgs ingest_args, label_args, fetch_args, train_args, finetune_args, eval_args,
      predict_args, render_args, full_args;
  std::string finetune_source, predict_model, render_labels, render_provenance = "official";

  add_common(app.add_subcommand("ingest", "Parse and filter crime reports"), ingest_args);
  add_common(app.add_subcommand("label", "Score grid cells and bin into three levels"),
             label_args);
  add_common(app.add_subcommand("fetch", "Acquire one tile per balanced labeled cell"),
             fetch_args);
  add_common(app.add_subcommand("train", "Train the classifier on the built dataset"),
             train_args);
  auto* finetune_cmd =
      app.add_subcommand("finetune", "Replace the head of a source model and train");
  add_common(finetune_cmd, finetune_args);
  finetune_cmd->add_option("--source", finetune_source, "Source model file")->required();
  add_common(app.add_subcommand("eval", "Cross-validate on the built dataset"), eval_args);
  auto* predict_cmd =
      app.add_subcommand("predict-map", "Predict a city map and compare to the official one");
  add_common(predict_cmd, predict_args);
  predict_cmd->add_option("--model", predict_model, "Trained model file")->required();
  auto* render_cmd = app.add_subcommand("render", "Render maps from a labels file");
  add_common(render_cmd, render_args);
  render_cmd->add_option("--labels", render_labels, "Labels file (defaults to output.dir/labels.tsv)");
  render_cmd->add_option("--provenance", render_provenance, "official or predicted");
  add_common(app.add_subcommand("full-run", "Run the whole pipeline end to end"), full_args);

  auto* synth_cmd = app.add_subcommand("synth-city", "Generate a synthetic city reports file");
  std::string synth_out;
  int synth_rows = 40, synth_cols = 40;
  double synth_lat = 41.85, synth_lon = -87.68, synth_cell = 30.0;
  uint64_t synth_seed = 1;
  synth_cmd->add_option("--out", synth_out, "Output reports CSV path")->required();
  synth_cmd->add_option("--rows", synth_rows, "Grid rows");
  synth_cmd->add_option("--cols", synth_cols, "Grid columns");
  synth_cmd->add_option("--lat-min", synth_lat, "Grid origin latitude");
  synth_cmd->add_option("--lon-min", synth_lon, "Grid origin longitude");
  synth_cmd->add_option("--cell-side-m", synth_cell, "Cell side in meters");
  synth_cmd->add_option("--seed", synth_seed, "Layout seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("ingest")) {
      auto cfg = load_config(ingest_args);
      IngestStats stats;
      auto reports = run_ingest(cfg, &stats);
      log_stats(stats);
      std::ofstream out(cfg.output_dir / "reports.jsonl", std::ios::binary);
      write_reports_jsonl(out, reports);
      write_run_manifest(cfg, "ingest", {cfg.reports_path},
                         {cfg.output_dir / "reports.jsonl"});
    } else if (app.got_subcommand("label")) {
      auto cfg = load_config(label_args);
      auto art = ingest_and_label(cfg);
      auto outputs = write_label_artifacts(cfg, art);
      write_run_manifest(cfg, "label", {cfg.reports_path}, outputs);
    } else if (app.got_subcommand("fetch")) {
      auto cfg = load_config(fetch_args);
      auto art = ingest_and_label(cfg);
      write_label_artifacts(cfg, art);
      auto outputs = build_tiles(cfg, art);
      write_run_manifest(cfg, "fetch", {cfg.reports_path}, outputs);
    } else if (app.got_subcommand("train")) {
      auto cfg = load_config(train_args);
      auto outputs = train_model(cfg, init_params(cfg.arch, cfg.train_cfg.seed));
      write_run_manifest(cfg, "train", {cfg.output_dir / "dataset" / "manifest.tsv"}, outputs);
    } else if (app.got_subcommand("finetune")) {
      auto cfg = load_config(finetune_args);
      ModelParams source = load_params(finetune_source);
      ModelParams init = replace_head(source, cfg.arch.num_classes(), cfg.train_cfg.seed);
      auto outputs = train_model(cfg, init);
      write_run_manifest(cfg, "finetune",
                         {fs::path(finetune_source), cfg.output_dir / "dataset" / "manifest.tsv"},
                         outputs);
    } else if (app.got_subcommand("eval")) {
      auto cfg = load_config(eval_args);
      auto outputs = run_eval(cfg);
      write_run_manifest(cfg, "eval", {cfg.output_dir / "dataset" / "manifest.tsv"}, outputs);
    } else if (app.got_subcommand("predict-map")) {
      auto cfg = load_config(predict_args);
      auto art = ingest_and_label(cfg);
      auto outputs = run_predict_map(cfg, predict_model, art, nullptr);
      write_run_manifest(cfg, "predict-map", {cfg.reports_path, fs::path(predict_model)}, outputs);
    } else if (app.got_subcommand("render")) {
      auto cfg = load_config(render_args);
      fs::path labels_path =
          render_labels.empty() ? cfg.output_dir / "labels.tsv" : fs::path(render_labels);
      auto cells = read_labels_file(labels_path);
      CityMap map = official_map(cells, cfg.grid);
      if (render_provenance == "predicted")
        map.provenance = Provenance::Predicted;
      else if (render_provenance != "official")
        throw ConfigError("--provenance must be official or predicted");
      auto outputs = write_map_outputs(cfg.output_dir, cfg.city, map, cfg.render_scale);
      write_run_manifest(cfg, "render", {labels_path}, outputs);
    } else if (app.got_subcommand("full-run")) {
      auto cfg = load_config(full_args);
      auto art = ingest_and_label(cfg);
      std::vector<fs::path> outputs = write_label_artifacts(cfg, art);
      auto tile_outputs = build_tiles(cfg, art);
      outputs.insert(outputs.end(), tile_outputs.begin(), tile_outputs.end());
      auto train_outputs = train_model(cfg, init_params(cfg.arch, cfg.train_cfg.seed));
      outputs.insert(outputs.end(), train_outputs.begin(), train_outputs.end());
      auto eval_outputs = run_eval(cfg);
      outputs.insert(outputs.end(), eval_outputs.begin(), eval_outputs.end());
      auto map_outputs = run_predict_map(cfg, cfg.output_dir / "model.bin", art, nullptr);
      outputs.insert(outputs.end(), map_outputs.begin(), map_outputs.end());
      write_run_manifest(cfg, "full-run", {cfg.reports_path}, outputs);
    } else if (app.got_subcommand("synth-city")) {
      SynthCitySpec spec;
      spec.grid = make_grid_spec(synth_lat, synth_lon, synth_rows, synth_cols, synth_cell);
      spec.layout_seed = synth_seed;
      SynthCity city = generate_synth_city(spec);
      fs::path out_path(synth_out);
      if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
      std::ofstream out(out_path, std::ios::binary);
      write_reports_csv(out, city.reports);
      char buf[32];
      auto coord = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10f", v);
        return std::string(buf);
      };
      std::cout << "grid.lat_min = " << coord(spec.grid.lat_min) << "\n"
                << "grid.lat_max = " << coord(spec.grid.lat_max) << "\n"
                << "grid.lon_min = " << coord(spec.grid.lon_min) << "\n"
                << "grid.lon_max = " << coord(spec.grid.lon_max) << "\n"
                << "grid.cell_side_m = " << spec.grid.cell_side_m << "\n";
      std::cerr << "synth-city: " << city.reports.size() << " reports written to " << synth_out
                << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DegenerateInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
