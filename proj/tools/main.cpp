#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "iglab/kernels.hpp"
#include "iglab/pipeline.hpp"

namespace {

using iglab::RunConfig;

int run(int argc, char** argv) {
  CLI::App app{"iglab: layer-wise integrated-gradients laboratory for extractive QA"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> workdir_override;
  app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
  app.add_option("--seed", seed_override, "override the global seed");
  app.add_option("--workdir", workdir_override, "override the working directory");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/dev corpus");
  auto* tr = app.add_subcommand("train", "train the model; writes vocab, checkpoint, metrics");
  auto* ev = app.add_subcommand("eval", "EM/F1/confidence on the dev set");
  auto* at = app.add_subcommand("attribute", "layer-wise integrated gradients over the dev set");

  auto* hm = app.add_subcommand("heatmap", "pairwise-layer JSD heatmaps from the attribution dump");
  std::string hm_mode;
  std::optional<int> hm_k;
  hm->add_option("--mode", hm_mode, "full | topk-retained | topk-removed (default: all three)");
  hm->add_option("--k", hm_k, "top-k for retained/removed modes (default: analysis.k_jsd)");

  auto* st = app.add_subcommand("stats", "semantic and POS top-k statistics");
  auto* qu = app.add_subcommand("quantifier", "quantifier-question ratio and confidence report");

  auto* em = app.add_subcommand("export-embeddings", "per-layer token embeddings for one example");
  std::string example_id;
  em->add_option("--example", example_id, "example id (e.g. dev-00000)")->required();

  auto* rp = app.add_subcommand("report", "consolidated report with every analysis");
  auto* be = app.add_subcommand("backend", "print the active kernel backend");

  CLI11_PARSE(app, argc, argv);

  if (be->parsed()) {
    std::printf("%s\n", iglab::kernels::backend_name(iglab::kernels::active_backend()));
    return 0;
  }

  RunConfig cfg = config_path.empty() ? RunConfig::defaults() : RunConfig::from_file(config_path);
  if (seed_override) cfg.seed = *seed_override;
  if (workdir_override) {
    cfg.paths = iglab::RunPaths{};
    cfg.paths.workdir = *workdir_override;
    cfg.paths.resolve();
  }
  cfg.validate();

  if (gen->parsed()) {
    iglab::pipeline::cmd_gen_data(cfg);
    std::printf("wrote %s and %s\n", cfg.paths.train_dataset.c_str(), cfg.paths.dev_dataset.c_str());
  } else if (tr->parsed()) {
    const auto final_eval = iglab::pipeline::cmd_train(cfg);
    std::printf("trained: dev EM %.2f F1 %.2f confidence %.4f\n", final_eval.em, final_eval.f1,
                final_eval.mean_confidence);
  } else if (ev->parsed()) {
    const auto result = iglab::pipeline::cmd_eval(cfg);
    std::printf("EM %.2f F1 %.2f confidence %.4f\n", result.em, result.f1, result.mean_confidence);
  } else if (at->parsed()) {
    iglab::pipeline::cmd_attribute(cfg);
    std::printf("wrote %s\n", cfg.paths.attribution.c_str());
  } else if (hm->parsed()) {
    std::optional<iglab::HeatmapMode> mode;
    if (!hm_mode.empty()) mode = iglab::heatmap_mode_from_name(hm_mode);
    iglab::pipeline::cmd_heatmap(cfg, mode, hm_k);
    std::printf("wrote heatmaps under %s\n", cfg.paths.workdir.c_str());
  } else if (st->parsed()) {
    iglab::pipeline::cmd_stats(cfg);
    std::printf("wrote stats under %s\n", cfg.paths.workdir.c_str());
  } else if (qu->parsed()) {
    iglab::pipeline::cmd_quantifier(cfg);
    std::printf("wrote quantifier report under %s\n", cfg.paths.workdir.c_str());
  } else if (em->parsed()) {
    iglab::pipeline::cmd_export_embeddings(cfg, example_id);
    std::printf("wrote embeddings for %s under %s\n", example_id.c_str(),
                cfg.paths.workdir.c_str());
  } else if (rp->parsed()) {
    iglab::pipeline::cmd_report(cfg);
    std::printf("wrote consolidated report to %s\n", cfg.paths.reports_dir.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const iglab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const iglab::MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const iglab::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
