#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "crimemap/pipeline.hpp"

using namespace crimemap;
using Catch::Approx;

namespace {

ConfigFile parse_cfg(const std::string& text) {
  std::istringstream in(text);
  return ConfigFile::parse(in);
}

std::string base_pipeline_cfg() {
  return "city = testville\n"
         "grid.lat_min = 41.85\n"
         "grid.lat_max = 41.86\n"
         "grid.lon_min = -87.68\n"
         "grid.lon_max = -87.67\n";
}

}  // namespace

TEST_CASE("config files parse dotted keys, comments and blank lines") {
  auto cfg = parse_cfg(
      "# a comment\n"
      "\n"
      "grid.cell_side_m = 30\n"
      "city = springfield  \n"
      "train.learning_rate = 0.01\n");
  CHECK(cfg.get_double("grid.cell_side_m") == 30.0);
  CHECK(cfg.get_string("city") == "springfield");
  CHECK(cfg.get_double("train.learning_rate") == Approx(0.01));
  CHECK(cfg.has("city"));
  CHECK_FALSE(cfg.has("nope"));
}

TEST_CASE("malformed config lines are errors") {
  CHECK_THROWS_AS(parse_cfg("this line has no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse_cfg("= value without key\n"), ConfigError);
}

TEST_CASE("typed getters validate their values") {
  auto cfg = parse_cfg("a = hello\nb = 3.5\nc = yes\nd = 7\n");
  CHECK_THROWS_AS(cfg.get_double("a"), ConfigError);
  CHECK_THROWS_AS(cfg.get_int("b"), ConfigError);
  CHECK(cfg.get_bool("c", false));
  CHECK(cfg.get_int("d") == 7);
  CHECK_THROWS_AS(cfg.get_string("missing"), ConfigError);
  CHECK(cfg.get_string("missing", "dflt") == "dflt");
  CHECK_THROWS_AS(cfg.get_bool("a", false), ConfigError);
}

TEST_CASE("the canonical form sorts keys so the hash ignores declaration order") {
  auto a = parse_cfg("x = 1\ny = 2\n");
  auto b = parse_cfg("y = 2\nx = 1\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  auto c = parse_cfg("x = 1\ny = 3\n");
  CHECK(a.hash() != c.hash());
  CHECK(a.hash().size() == 16);
}

TEST_CASE("set overrides parsed values") {
  auto cfg = parse_cfg("x = 1\n");
  cfg.set("x", "2");
  CHECK(cfg.get_int("x") == 2);
}

TEST_CASE("pipeline config picks up defaults and grid values") {
  auto p = PipelineConfig::from_config(parse_cfg(base_pipeline_cfg()));
  CHECK(p.city == "testville");
  CHECK(p.grid.cell_side_m == 30.0);
  CHECK(p.zoom == 17);
  CHECK(p.size_px == 256);
  CHECK(p.bin_method == BinMethod::KMeans);
  CHECK_FALSE(p.provider_remote);
  CHECK(p.train_cfg.learning_rate == Approx(0.01));
  CHECK(p.train_cfg.momentum == Approx(0.9));
  CHECK(p.train_cfg.iterations == 2000);
  CHECK(p.train_cfg.pretrained_lr_multiplier == Approx(0.1));
  CHECK(p.split_spec.test_fraction == Approx(0.05));
  CHECK(p.split_spec.repeats == 3);
  CHECK(p.arch.serialize() == ArchSpec::desk_default().serialize());
  CHECK(p.policy.mode == CategoryPolicy::Mode::Allowlist);
  CHECK(p.policy.categories.count("homicide") == 1);
}

TEST_CASE("tile zoom outside 17-20 needs an explicit override") {
  CHECK_THROWS_AS(PipelineConfig::from_config(parse_cfg(base_pipeline_cfg() + "tile.zoom = 15\n")),
                  ConfigError);
  auto p = PipelineConfig::from_config(
      parse_cfg(base_pipeline_cfg() + "tile.zoom = 15\ntile.zoom_unrestricted = true\n"));
  CHECK(p.zoom == 15);
  auto q = PipelineConfig::from_config(parse_cfg(base_pipeline_cfg() + "tile.zoom = 20\n"));
  CHECK(q.zoom == 20);
}

TEST_CASE("provider kind http requires a valid url template") {
  CHECK_THROWS_AS(
      PipelineConfig::from_config(parse_cfg(base_pipeline_cfg() + "provider.kind = http\n")),
      ConfigError);
  auto p = PipelineConfig::from_config(parse_cfg(
      base_pipeline_cfg() +
      "provider.kind = http\nprovider.url_template = https://x/{lat}/{lon}/{zoom}/{size}\n"));
  CHECK(p.provider_remote);
  CHECK_THROWS_AS(
      PipelineConfig::from_config(parse_cfg(base_pipeline_cfg() + "provider.kind = carrier_pigeon\n")),
      ConfigError);
}

TEST_CASE("category policy lists parse from comma-separated values") {
  auto p = PipelineConfig::from_config(parse_cfg(
      base_pipeline_cfg() +
      "ingest.policy.mode = denylist\ningest.policy.categories = Theft, Fraud , forgery\n"));
  CHECK(p.policy.mode == CategoryPolicy::Mode::Denylist);
  CHECK(p.policy.categories == std::set<std::string>{"theft", "fraud", "forgery"});
}

TEST_CASE("column mappings accept names and indices") {
  auto p = PipelineConfig::from_config(parse_cfg(
      base_pipeline_cfg() + "ingest.col.latitude = Latitude\ningest.col.longitude = 8\n"));
  CHECK(std::get<std::string>(p.mapping.latitude) == "Latitude");
  CHECK(std::get<int>(p.mapping.longitude) == 8);
}

TEST_CASE("a custom arch string overrides the default") {
  auto p = PipelineConfig::from_config(
      parse_cfg(base_pipeline_cfg() + "arch = input 8x8x3; flatten; softmax 3\n"));
  CHECK(p.arch.in_h == 8);
  CHECK(p.arch.num_classes() == 3);
}

TEST_CASE("invalid grid bboxes are rejected at load time") {
  CHECK_THROWS_AS(PipelineConfig::from_config(parse_cfg("city = x\n"
                                                        "grid.lat_min = 41.86\n"
                                                        "grid.lat_max = 41.85\n"
                                                        "grid.lon_min = -87.68\n"
                                                        "grid.lon_max = -87.67\n")),
                  ConfigError);
}

TEST_CASE("bin model files round-trip through the config format") {
  BinModel m;
  m.method = BinMethod::KMeans;
  m.centroids = {1.5, 24.0, 80.25};
  m.boundaries = {12.75, 52.125};
  m.seed = 9;
  auto dir = std::filesystem::temp_directory_path() / "crimemap_bins_test";
  std::filesystem::create_directories(dir);
  write_bin_model(dir / "bins.cfg", m);
  auto cfg = ConfigFile::load(dir / "bins.cfg");
  CHECK(cfg.get_string("binning.method") == "kmeans");
  CHECK(cfg.get_double("binning.centroid_0") == Approx(1.5));
  CHECK(cfg.get_double("binning.centroid_2") == Approx(80.25));
  CHECK(cfg.get_double("binning.boundary_1") == Approx(52.125));
  CHECK(cfg.get_int("binning.seed") == 9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("labels files round-trip through the TSV format") {
  GridSpec grid = make_grid_spec(41.85, -87.68, 2, 2, 30.0);
  std::vector<LabeledCell> cells = {{CellId{0, 0}, 3, Label::Low},
                                    {CellId{0, 1}, 25, Label::Neutral},
                                    {CellId{1, 1}, 88, Label::High}};
  auto dir = std::filesystem::temp_directory_path() / "crimemap_labels_test";
  std::filesystem::create_directories(dir);
  write_labels_file(dir / "labels.tsv", cells, grid);
  auto back = read_labels_file(dir / "labels.tsv");
  CHECK(back == cells);
  std::filesystem::remove_all(dir);
}
