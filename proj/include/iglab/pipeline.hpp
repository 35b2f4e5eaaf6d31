#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iglab/analysis.hpp"
#include "iglab/config.hpp"

// Command implementations behind the CLI verbs. Each command is idempotent
// given identical inputs and seed, writes only its own outputs, and stamps
// every output file with the config hash.
namespace iglab::pipeline {

void cmd_gen_data(const RunConfig& cfg);
EvalResult cmd_train(const RunConfig& cfg);
EvalResult cmd_eval(const RunConfig& cfg);
void cmd_attribute(const RunConfig& cfg);
void cmd_heatmap(const RunConfig& cfg, std::optional<HeatmapMode> mode = {},
                 std::optional<int> k = {});
void cmd_stats(const RunConfig& cfg);
void cmd_quantifier(const RunConfig& cfg);
void cmd_export_embeddings(const RunConfig& cfg, const std::string& example_id);
void cmd_report(const RunConfig& cfg);

// Attribution dump records (line-delimited JSON).
struct DumpExample {
  std::string id;
  int passage_len = 0;
  int pred_start = 0, pred_end = 0;  // passage-relative inclusive
  int gold_start = 0, gold_end = 0;
  double probability = 0.0;
  double score = 0.0;
  std::vector<LayerImportance> layers;
};

struct AttributionDump {
  std::string config_hash;
  int n_layers = 0;
  int m = 0;
  std::string norm, target, span_source;
  std::vector<DumpExample> examples;
};

AttributionDump read_attribution_dump(const std::string& path);

// Heatmap CSV plus a JSON metadata sidecar at <path>.meta.json.
void write_heatmap(const JsdHeatmap& hm, const std::string& path, const std::string& config_hash);

}  // namespace iglab::pipeline
