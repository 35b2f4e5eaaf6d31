// Acceptance suite: one numbered criterion per function, each printing a
// single [PASS]/[FAIL] line. Run all with no arguments or one criterion by
// number (used by ctest so the heavy ones can run in parallel).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "../support/gradcheck.hpp"
#include "iglab/analysis.hpp"
#include "iglab/attribution.hpp"
#include "iglab/pipeline.hpp"

using namespace iglab;
using namespace iglab::testsupport;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  std::string slug;
  std::function<Outcome()> run;
};

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED: " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string accept_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

// ---------------------------------------------------------------------------
// C1: autodiff gradient checks, every op kind, 100 seeded randomized trials,
// relative error <= 1e-4 against central finite differences, runtime < 30 s.
Outcome criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  Rng rng(0x1A4);
  std::map<std::string, double> worst;
  for (int trial = 0; trial < 100; ++trial) {
    for (const OpCase& oc : make_op_cases(rng)) {
      const double err = check_op_gradients(oc.make, oc.inputs);
      std::string key = op_name(oc.kind);
      if (!oc.variant.empty()) key += "/" + oc.variant;
      worst[key] = std::max(worst[key], err);
    }
  }
  double overall = 0.0;
  for (const auto& [op, err] : worst) {
    overall = std::max(overall, err);
    c.require(err <= 1e-4, op + " rel err " + fixed(err, 8));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 30.0, "runtime " + fixed(secs, 1) + "s exceeds 30s");
  c.note("22 op variants x 100 trials, worst rel err " + fixed(overall, 8) + ", " +
         fixed(secs, 1) + "s");
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C2: factorization identity over 50 dev examples and all layers, 1e-12,
// runtime < 30 s.
Outcome criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;

  GenConfig gen;
  gen.n_train = 60;
  gen.n_dev = 50;
  gen.seed = 0x2B;
  const auto [train, dev] = generate_corpus(gen);
  const Vocabulary vocab = build_vocab(train);
  ModelConfig mc;  // defaults: 4 layers, 4 heads, d_model 64, d_ff 256
  mc.vocab_size = vocab.size();
  mc.seed = 2;
  const Model model = init_model(mc);

  double worst = 0.0;
  for (const RawExample& raw : dev) {
    const EncodedExample enc = encode_example(raw, vocab, mc.max_seq_len);
    const ForwardResult fwd = forward_full(model, enc);
    for (int l = 0; l < mc.n_layers; ++l) {
      Recording rec;
      const GraphBuild g = forward_from_layer(
          model, rec, l, fwd.activations.h[static_cast<std::size_t>(l)], fwd.pad_mask);
      const SpanLogits logits = span_logits_values(rec, g);
      for (std::size_t i = 0; i < logits.start.size(); ++i) {
        worst = std::max(worst, std::abs(logits.start[i] - fwd.logits.start[i]));
        worst = std::max(worst, std::abs(logits.end[i] - fwd.logits.end[i]));
      }
    }
  }
  c.require(worst <= 1e-12, "max logit deviation " + fixed(worst, 16));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 30.0, "runtime " + fixed(secs, 1) + "s exceeds 30s");
  c.note("50 examples x 4 layers, max deviation " + fixed(worst, 16) + ", " + fixed(secs, 1) + "s");
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C3: IG exactness on a linear fixture: IG equals input (.) weight within
// 1e-10 at m = 1.
Outcome criterion_3() {
  Check c;
  Rng rng(0x3C);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor input = random_tensor(rng, {6, 5}, -2.0, 2.0);
    const Tensor weights = random_tensor(rng, {6, 5}, -2.0, 2.0);
    const auto linear_score = [&](Recording& rec, NodeRef leaf) {
      return rec.reduce_sum(rec.mul(leaf, rec.leaf(weights)));
    };
    const IgResult res = integrated_gradients(linear_score, input, 1);
    const Tensor expected = t_mul(input, weights);
    for (std::size_t i = 0; i < expected.v.size(); ++i)
      worst = std::max(worst, std::abs(res.ig.v[i] - expected.v[i]));
    worst = std::max(worst, completeness_of(res).absolute);
  }
  c.require(worst <= 1e-10, "max deviation " + fixed(worst, 14));
  c.note("20 random linear fixtures at m=1, max deviation " + fixed(worst, 14));
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C4: IG completeness on a trained 4-layer d_model-64 model: mean relative
// gap over 20 dev examples <= 5% at m=500 and <= 15% at m=50, with
// gap(m=500) <= gap(m=50) in the mean. Runtime < 5 min.
Outcome criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;

  GenConfig gen;
  gen.n_train = 400;
  gen.n_dev = 20;
  gen.seed = 0x4D;
  gen.passage_sentences = 4;
  const auto [train_raw, dev_raw] = generate_corpus(gen);
  const Vocabulary vocab = build_vocab(train_raw);
  ModelConfig mc;  // 4 layers, d_model 64
  mc.vocab_size = vocab.size();
  mc.seed = 4;
  std::vector<EncodedExample> train_enc, dev_enc;
  for (const auto& ex : train_raw) train_enc.push_back(encode_example(ex, vocab, mc.max_seq_len));
  for (const auto& ex : dev_raw) dev_enc.push_back(encode_example(ex, vocab, mc.max_seq_len));

  Hyperparams hp;
  hp.epochs = 4;
  hp.seed = 4;
  const Model model = train(init_model(mc), train_enc, {}, hp, 8).model;

  AttributionConfig cfg;
  double mean50 = 0.0, mean500 = 0.0;
  int count = 0;
  for (const EncodedExample& enc : dev_enc) {
    const ForwardResult fwd = forward_full(model, enc);
    const AttributionTarget target = pick_target(fwd, enc, cfg, 8);
    for (int l = 0; l < mc.n_layers; ++l) {
      AttributionConfig c50 = cfg;
      c50.m = 50;
      mean50 += completeness_of(layer_integrated_gradients(model, enc, fwd, target, l, c50)).relative;
      AttributionConfig c500 = cfg;
      c500.m = 500;
      mean500 +=
          completeness_of(layer_integrated_gradients(model, enc, fwd, target, l, c500)).relative;
      ++count;
    }
  }
  mean50 /= count;
  mean500 /= count;

  c.require(mean500 <= 0.05, "mean relative gap at m=500 is " + fixed(mean500) + " > 0.05");
  c.require(mean50 <= 0.15, "mean relative gap at m=50 is " + fixed(mean50) + " > 0.15");
  c.require(mean500 <= mean50, "gap(m=500) " + fixed(mean500) + " > gap(m=50) " + fixed(mean50));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 300.0, "runtime " + fixed(secs, 1) + "s exceeds 5 min");
  c.note("20 examples x 4 layers: mean rel gap m=50 " + fixed(mean50) + ", m=500 " +
         fixed(mean500) + ", " + fixed(secs, 1) + "s");
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C5: JSD property suite.
Outcome criterion_5() {
  Check c;
  Rng rng(0x5E);

  auto jsd_oracle = [](const std::vector<double>& p, const std::vector<double>& q) {
    auto kl = [](const std::vector<double>& a, const std::vector<double>& m) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > 0.0) s += a[i] * std::log2(a[i] / m[i]);
      return s;
    };
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    return 0.5 * kl(p, m) + 0.5 * kl(q, m);
  };
  auto random_dist = [&](std::size_t n) {
    Distribution d;
    d.p.resize(n);
    double s = 0.0;
    for (double& x : d.p) {
      x = rng.uniform(0.0, 1.0);
      s += x;
    }
    for (double& x : d.p) x /= s;
    return d;
  };

  for (int trial = 0; trial < 100; ++trial) {
    const Distribution p = random_dist(2 + rng.below(20));
    c.require(jsd(p, p) == 0.0, "jsd(p,p) != 0");
  }

  Distribution a, b;
  a.p = {1.0, 0.0};
  b.p = {0.0, 1.0};
  c.require(std::abs(jsd(a, b) - 1.0) <= 1e-12, "disjoint one-hots give " + fixed(jsd(a, b), 15));

  double worst_sym = 0.0, worst_oracle = 0.0;
  bool in_bounds = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    const Distribution p = random_dist(n);
    const Distribution q = random_dist(n);
    const double v = jsd(p, q);
    worst_sym = std::max(worst_sym, std::abs(v - jsd(q, p)));
    worst_oracle = std::max(worst_oracle, std::abs(v - jsd_oracle(p.p, q.p)));
    if (v < 0.0 || v > 1.0) in_bounds = false;
  }
  c.require(worst_sym <= 1e-12, "asymmetry " + fixed(worst_sym, 15));
  c.require(in_bounds, "a value escaped [0,1]");
  c.require(worst_oracle <= 1e-12, "oracle deviation " + fixed(worst_oracle, 15));
  c.note("identity, disjoint saturation, symmetry, 1000 bounded pairs, formula oracle");
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C6: top-k algebra on 1000 random distributions plus exact worked examples.
Outcome criterion_6() {
  Check c;
  Rng rng(0x6F);

  Distribution d;
  d.p = {0.5, 0.3, 0.2};
  const Distribution head = retain_topk(d, 2);
  const Distribution tail = remove_topk(d, 2);
  c.require(head.p == std::vector<double>{0.625, 0.375, 0.0},
            "retain_topk([0.5,0.3,0.2],2) != [0.625,0.375,0] exactly");
  c.require(tail.p == std::vector<double>{0.0, 0.0, 1.0},
            "remove_topk([0.5,0.3,0.2],2) != [0,0,1] exactly");

  bool all_valid = true, all_partition = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 3 + rng.below(20);
    Distribution p;
    p.p.resize(n);
    double s = 0.0;
    for (double& x : p.p) {
      x = rng.below(4) == 0 ? 0.0 : rng.uniform(0.0, 1.0);  // some zero entries
      s += x;
    }
    if (s == 0.0) {
      p.p[0] = 1.0;
      s = 1.0;
    }
    for (double& x : p.p) x /= s;

    const int k = 1 + static_cast<int>(rng.below(n - 1));
    const Distribution h = retain_topk(p, k);
    const Distribution t = remove_topk(p, k);
    try {
      h.validate("head");
      t.validate("tail");
    } catch (const std::exception&) {
      all_valid = false;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (h.p[i] > 0.0 && t.p[i] > 0.0) all_partition = false;
      if (p.p[i] > 0.0 && h.p[i] == 0.0 && t.p[i] == 0.0 && !t.degenerate) all_partition = false;
    }
  }
  c.require(all_valid, "a transformed distribution failed validation");
  c.require(all_partition, "supports did not partition the input support");
  c.note("1000 random distributions: valid outputs, disjoint supports, exact worked examples");
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C7: toy end-to-end: 2000 train / 500 dev, EM >= 85%. Runtime < 15 min.
Outcome criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;

  RunConfig cfg = RunConfig::defaults();
  cfg.seed = 20260807;
  cfg.paths = RunPaths{};
  cfg.paths.workdir = accept_dir("iglab_acceptance_c7");
  cfg.paths.resolve();

  pipeline::cmd_gen_data(cfg);
  const EvalResult ev = pipeline::cmd_train(cfg);

  c.require(ev.em >= 85.0, "dev EM " + fixed(ev.em, 2) + " < 85");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 900.0, "runtime " + fixed(secs, 1) + "s exceeds 15 min");
  c.note("2000/500 corpus, " + std::to_string(cfg.train_hp.epochs) + " epochs: dev EM " +
         fixed(ev.em, 2) + ", F1 " + fixed(ev.f1, 2) + ", " + fixed(secs, 1) + "s");
  fs::remove_all(cfg.paths.workdir);
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// pipeline config shared by C8/C9: small but exercises every stage
RunConfig pipeline_config(const std::string& workdir) {
  RunConfig cfg = RunConfig::defaults();
  cfg.seed = 808;
  cfg.corpus.n_train = 120;
  cfg.corpus.n_dev = 30;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_model = 32;
  cfg.model.d_ff = 64;
  cfg.train_hp.epochs = 2;
  cfg.attribution.m = 8;
  cfg.attribution_max_examples = 12;
  cfg.paths = RunPaths{};
  cfg.paths.workdir = workdir;
  cfg.paths.resolve();
  return cfg;
}

void run_pipeline(const RunConfig& cfg) {
  pipeline::cmd_gen_data(cfg);
  pipeline::cmd_train(cfg);
  pipeline::cmd_attribute(cfg);
  pipeline::cmd_report(cfg);
}

std::map<std::string, std::string> dir_bytes(const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    out[fs::relative(entry.path(), dir).string()] =
        std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
  return out;
}

// C8: the full pipeline, run twice with the same seed, yields byte-identical
// report directories.
Outcome criterion_8() {
  Check c;
  const RunConfig a = pipeline_config(accept_dir("iglab_acceptance_c8a"));
  const RunConfig b = pipeline_config(accept_dir("iglab_acceptance_c8b"));
  run_pipeline(a);
  run_pipeline(b);

  const auto files_a = dir_bytes(a.paths.reports_dir);
  const auto files_b = dir_bytes(b.paths.reports_dir);
  c.require(!files_a.empty(), "report directory is empty");
  c.require(files_a.size() == files_b.size(),
            "file counts differ: " + std::to_string(files_a.size()) + " vs " +
                std::to_string(files_b.size()));
  for (const auto& [name, bytes] : files_a) {
    const auto it = files_b.find(name);
    if (it == files_b.end()) {
      c.require(false, name + " missing from the second run");
      continue;
    }
    c.require(bytes == it->second, name + " differs between runs");
  }
  c.note(std::to_string(files_a.size()) + " report files byte-identical across two runs");
  fs::remove_all(a.paths.workdir);
  fs::remove_all(b.paths.workdir);
  return {c.ok, c.detail};
}

// C9: the consolidated report contains every analysis with its invariants
// machine-checked during emission.
Outcome criterion_9() {
  Check c;
  const RunConfig cfg = pipeline_config(accept_dir("iglab_acceptance_c9"));
  run_pipeline(cfg);
  const std::string rd = cfg.paths.reports_dir;

  const std::vector<std::string> expected = {
      "heatmap_full.csv",          "heatmap_retained_top2.csv", "heatmap_removed_top2.csv",
      "semantic_stats.csv",        "pos_stats.csv",             "quantifier_report.json",
      "eval.json",                 "train_metrics.json",        "report.json"};
  for (const std::string& name : expected)
    c.require(fs::exists(rd + "/" + name), name + " missing from the report");

  // the emission path validates before writing; re-check the emitted values here
  const pipeline::AttributionDump dump = pipeline::read_attribution_dump(cfg.paths.attribution);
  std::vector<std::vector<LayerImportance>> imps;
  for (const auto& ex : dump.examples) imps.push_back(ex.layers);
  for (const HeatmapMode mode :
       {HeatmapMode::full, HeatmapMode::topk_retained, HeatmapMode::topk_removed}) {
    const JsdHeatmap hm = jsd_heatmap(imps, mode, cfg.analysis.k_jsd);
    try {
      hm.validate();
    } catch (const std::exception& e) {
      c.require(false, std::string("heatmap invariant: ") + e.what());
    }
  }

  std::ifstream in(rd + "/report.json");
  nlohmann::json manifest;
  in >> manifest;
  c.require(manifest.value("config_hash", "") == cfg.hash(), "manifest hash mismatch");
  c.require(manifest.at("invariants_checked").size() >= 4, "manifest lists too few invariants");
  bool embeddings_listed = false;
  for (const auto& f : manifest.at("files"))
    if (f.get<std::string>().rfind("embeddings_", 0) == 0) embeddings_listed = true;
  c.require(embeddings_listed, "no embedding export in the report");

  c.note("heatmaps (full/retained/removed at k=2), semantic+POS stats (k=5, window 5), "
         "quantifier report, confidence split, embeddings, manifest with invariant checklist");
  fs::remove_all(cfg.paths.workdir);
  return {c.ok, c.detail};
}

// ---------------------------------------------------------------------------
// C10: predict_span equals exhaustive search on 500 random logit vectors.
Outcome criterion_10() {
  Check c;
  Rng rng(0xA0);
  bool all_match = true;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 8 + static_cast<int>(rng.below(24));
    const int pb = 1 + static_cast<int>(rng.below(4));
    const int pe = pb + 4 + static_cast<int>(rng.below(static_cast<std::size_t>(n - pb - 4)));
    const int max_len = 1 + static_cast<int>(rng.below(8));
    SpanLogits logits;
    for (int i = 0; i < n; ++i) {
      logits.start.push_back(rng.uniform(-5.0, 5.0));
      logits.end.push_back(rng.uniform(-5.0, 5.0));
    }
    const IndexRange passage{pb, pe};
    const SpanPrediction pred = predict_span(logits, passage, max_len);

    int best_s = -1, best_e = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int s = pb; s < pe; ++s)
      for (int e = s; e < pe && e - s + 1 <= max_len; ++e) {
        const double sc = logits.start[static_cast<std::size_t>(s)] +
                          logits.end[static_cast<std::size_t>(e)];
        if (sc > best) {
          best = sc;
          best_s = s;
          best_e = e;
        }
      }
    if (pred.start != best_s || pred.end != best_e || pred.score != best) all_match = false;
  }
  c.require(all_match, "a prediction diverged from exhaustive search");
  c.note("500 random logit vectors match exhaustive search exactly");
  return {c.ok, c.detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "autodiff-gradient-checks", criterion_1},
      {2, "factorization-identity", criterion_2},
      {3, "ig-linear-fixture-exactness", criterion_3},
      {4, "ig-completeness", criterion_4},
      {5, "jsd-property-suite", criterion_5},
      {6, "topk-algebra", criterion_6},
      {7, "toy-end-to-end-em", criterion_7},
      {8, "pipeline-determinism", criterion_8},
      {9, "pipeline-completeness", criterion_9},
      {10, "span-brute-force-oracle", criterion_10},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (const Criterion& cr : criteria) {
    if (only != 0 && cr.number != only) continue;
    Outcome out;
    try {
      out = cr.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] C%d %s: %s\n", out.pass ? "PASS" : "FAIL", cr.number, cr.slug.c_str(),
                out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
