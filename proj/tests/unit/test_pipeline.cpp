#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iglab/pipeline.hpp"

using namespace iglab;
namespace fs = std::filesystem;

namespace {

// small end-to-end configuration that runs in seconds
RunConfig tiny_config(const std::string& workdir) {
  RunConfig cfg = RunConfig::defaults();
  cfg.seed = 404;
  cfg.corpus.n_train = 24;
  cfg.corpus.n_dev = 8;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_model = 32;
  cfg.model.d_ff = 64;
  cfg.train_hp.epochs = 1;
  cfg.train_hp.batch_size = 8;
  cfg.attribution.m = 4;
  cfg.attribution_max_examples = 4;
  cfg.paths = RunPaths{};
  cfg.paths.workdir = workdir;
  cfg.paths.resolve();
  return cfg;
}

std::string tmpdir(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: defaults resolve, unknown keys and bad enums are rejected") {
  const RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.attribution.m == 50);
  CHECK(cfg.analysis.k_top == 5);
  CHECK(cfg.analysis.k_jsd == 2);
  CHECK(cfg.analysis.window == 5);
  CHECK(cfg.paths.train_dataset == "runs/default/train.jsonl");

  CHECK_THROWS_AS(RunConfig::from_json_text("{\"sead\": 3}", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{\"corpus\": {\"n_trian\": 5}}", "test"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{\"attribution\": {\"norm\": \"l3\"}}", "test"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("not json", "test"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{\"model\": {\"d_model\": 65}}", "test"),
                  ConfigError);

  const RunConfig parsed = RunConfig::from_json_text(
      "{\"seed\": 7, \"attribution\": {\"norm\": \"squared-l2\", \"m\": 13}}", "test");
  CHECK(parsed.seed == 7);
  CHECK(parsed.attribution.m == 13);
  CHECK(parsed.attribution.norm == NormKind::squared_l2);
}

TEST_CASE("config hash is stable and sensitive to fields but not paths") {
  RunConfig a = RunConfig::defaults();
  RunConfig b = RunConfig::defaults();
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);

  b.seed = a.seed + 1;
  CHECK(a.hash() != b.hash());

  RunConfig c = RunConfig::defaults();
  c.paths.workdir = "elsewhere";
  c.paths = RunPaths{};
  c.paths.workdir = "elsewhere";
  c.paths.resolve();
  CHECK(a.hash() == c.hash());
}

TEST_CASE("pipeline: missing upstream artifacts name the producing command") {
  const RunConfig cfg = tiny_config(tmpdir("iglab_missing"));
  try {
    pipeline::cmd_heatmap(cfg);
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(cfg.paths.attribution) != std::string::npos);
    CHECK(msg.find("attribute") != std::string::npos);
  }
  try {
    pipeline::cmd_train(cfg);
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
  }
  fs::remove_all(cfg.paths.workdir);
}

TEST_CASE("pipeline: full command chain produces a complete report") {
  const RunConfig cfg = tiny_config(tmpdir("iglab_chain"));
  pipeline::cmd_gen_data(cfg);
  CHECK(fs::exists(cfg.paths.train_dataset));
  CHECK(fs::exists(cfg.paths.dev_dataset));

  pipeline::cmd_train(cfg);
  CHECK(fs::exists(cfg.paths.vocab));
  CHECK(fs::exists(cfg.paths.checkpoint));
  CHECK(fs::exists(cfg.paths.metrics));

  pipeline::cmd_eval(cfg);
  CHECK(fs::exists(cfg.paths.eval_report));

  pipeline::cmd_attribute(cfg);
  CHECK(fs::exists(cfg.paths.attribution));
  const pipeline::AttributionDump dump = pipeline::read_attribution_dump(cfg.paths.attribution);
  CHECK(dump.examples.size() == 4);
  CHECK(dump.n_layers == 2);
  CHECK(dump.config_hash == cfg.hash());
  for (const auto& ex : dump.examples) {
    CHECK(ex.layers.size() == 2);
    for (const auto& imp : ex.layers) {
      double s = 0.0;
      for (const double p : imp.probabilities) s += p;
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }

  pipeline::cmd_heatmap(cfg);
  CHECK(fs::exists(cfg.paths.workdir + "/heatmap_full.csv"));
  CHECK(fs::exists(cfg.paths.workdir + "/heatmap_retained_top2.csv"));
  CHECK(fs::exists(cfg.paths.workdir + "/heatmap_removed_top2.csv"));
  CHECK(fs::exists(cfg.paths.workdir + "/heatmap_full.csv.meta.json"));

  pipeline::cmd_stats(cfg);
  CHECK(fs::exists(cfg.paths.workdir + "/semantic_stats.csv"));
  CHECK(fs::exists(cfg.paths.workdir + "/pos_stats.csv"));

  pipeline::cmd_quantifier(cfg);
  CHECK(fs::exists(cfg.paths.workdir + "/quantifier_report.json"));

  pipeline::cmd_export_embeddings(cfg, dump.examples.front().id);
  CHECK(fs::exists(cfg.paths.workdir + "/embeddings_" + dump.examples.front().id + ".tsv"));

  pipeline::cmd_report(cfg);
  const std::string rd = cfg.paths.reports_dir;
  for (const char* name :
       {"heatmap_full.csv", "heatmap_retained_top2.csv", "heatmap_removed_top2.csv",
        "semantic_stats.csv", "pos_stats.csv", "quantifier_report.json", "eval.json",
        "train_metrics.json", "report.json"}) {
    CHECK(fs::exists(rd + "/" + std::string(name)));
  }

  // every emitted file carries the config hash
  for (const char* name : {"/semantic_stats.csv", "/pos_stats.csv", "/heatmap_full.csv"}) {
    const std::string body = slurp(rd + name);
    CHECK(body.find(cfg.hash()) != std::string::npos);
  }

  fs::remove_all(cfg.paths.workdir);
}

TEST_CASE("pipeline: config hash mismatch is an error downstream") {
  RunConfig cfg = tiny_config(tmpdir("iglab_hashmix"));
  pipeline::cmd_gen_data(cfg);
  pipeline::cmd_train(cfg);
  pipeline::cmd_attribute(cfg);

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;  // different experiment, same workdir
  CHECK_THROWS_AS(pipeline::cmd_heatmap(other), ConfigError);
  CHECK_THROWS_AS(pipeline::cmd_eval(other), ConfigError);
  fs::remove_all(cfg.paths.workdir);
}

TEST_CASE("gen-data is byte-deterministic") {
  const RunConfig a = tiny_config(tmpdir("iglab_det_a"));
  const RunConfig b = tiny_config(tmpdir("iglab_det_b"));
  pipeline::cmd_gen_data(a);
  pipeline::cmd_gen_data(b);
  CHECK(slurp(a.paths.train_dataset) == slurp(b.paths.train_dataset));
  CHECK(slurp(a.paths.dev_dataset) == slurp(b.paths.dev_dataset));
  fs::remove_all(a.paths.workdir);
  fs::remove_all(b.paths.workdir);
}
