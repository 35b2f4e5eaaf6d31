#include "iglab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "iglab/rng.hpp"

namespace iglab::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing " + path + "; produce it with `iglab " + producer + "`");
}

void check_hash(const std::string& artifact, const std::string& found,
                const std::string& expected) {
  if (!found.empty() && found != expected)
    throw ConfigError(artifact + " carries config hash " + found + " but the current config is " +
                      expected + "; regenerate upstream artifacts or restore the config");
}

void write_json_file(const json& j, const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed for " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return j;
}

std::vector<RawExample> load_raw(const std::string& path, const std::string& producer) {
  require_artifact(path, producer);
  try {
    return load_dataset(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

Model load_checkpoint(const RunConfig& cfg) {
  require_artifact(cfg.paths.checkpoint, "train");
  std::string hash;
  Model m = load_model(cfg.paths.checkpoint, &hash);
  check_hash(cfg.paths.checkpoint, hash, cfg.hash());
  return m;
}

Vocabulary load_vocab_checked(const RunConfig& cfg) {
  require_artifact(cfg.paths.vocab, "train");
  std::string hash;
  Vocabulary vocab = load_vocab(cfg.paths.vocab, &hash);
  check_hash(cfg.paths.vocab, hash, cfg.hash());
  return vocab;
}

std::vector<EncodedExample> encode_all(const std::vector<RawExample>& raw,
                                       const Vocabulary& vocab, const RunConfig& cfg) {
  EncodeOptions opt;
  opt.overlap_excludes_stopwords = cfg.analysis.overlap_excludes_stopwords;
  std::vector<EncodedExample> out;
  out.reserve(raw.size());
  for (const auto& ex : raw) out.push_back(encode_example(ex, vocab, cfg.model.max_seq_len, opt));
  return out;
}

json eval_to_json(const EvalResult& ev, int n_examples, const std::string& hash) {
  return json{{"config_hash", hash},
              {"n_examples", n_examples},
              {"em", ev.em},
              {"f1", ev.f1},
              {"mean_confidence", ev.mean_confidence}};
}

// Reconstructs the analysis inputs (raw examples aligned with dump records).
struct AlignedDump {
  AttributionDump dump;
  std::vector<RawExample> raw;                          // aligned with dump.examples
  std::vector<std::vector<LayerImportance>> importances;
  std::vector<ExampleSpans> spans;      // per configured span source
  std::vector<ExampleOutcome> outcomes;
};

AlignedDump load_aligned_dump(const RunConfig& cfg) {
  require_artifact(cfg.paths.attribution, "attribute");
  AlignedDump out;
  out.dump = read_attribution_dump(cfg.paths.attribution);
  check_hash(cfg.paths.attribution, out.dump.config_hash, cfg.hash());

  const std::vector<RawExample> dev = load_raw(cfg.paths.dev_dataset, "gen-data");
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < dev.size(); ++i) by_id[dev[i].id] = i;

  for (const DumpExample& de : out.dump.examples) {
    const auto it = by_id.find(de.id);
    if (it == by_id.end())
      throw DataError("attribution dump references example " + de.id + " absent from " +
                      cfg.paths.dev_dataset);
    out.raw.push_back(dev[it->second]);
    out.importances.push_back(de.layers);
    if (cfg.analysis.span_source == SpanSource::gold)
      out.spans.push_back(ExampleSpans{de.gold_start, de.gold_end});
    else
      out.spans.push_back(ExampleSpans{de.pred_start, de.pred_end});
    out.outcomes.push_back(
        ExampleOutcome{de.pred_start, de.pred_end, de.gold_start, de.gold_end, de.probability});
  }
  return out;
}

void write_category_stats(const CategoryStatsTable& t, const std::string& path,
                          const std::string& hash) {
  t.validate();
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path);
  out << "# config_hash=" << hash << "\n";
  out << "# k=" << t.k << " window=" << t.window << " n_examples=" << t.n_examples << "\n";
  out << "layer,pct_answer_span,pct_q_words,pct_contextual_words\n";
  for (std::size_t l = 0; l < t.rows.size(); ++l)
    out << l << "," << fmt_double(t.rows[l].pct_answer_span) << ","
        << fmt_double(t.rows[l].pct_q_words) << "," << fmt_double(t.rows[l].pct_contextual)
        << "\n";
  if (!out) throw DataError("write failed for " + path);
}

void write_pos_stats(const PosStatsTable& t, const std::string& path, const std::string& hash) {
  t.validate();
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path);
  out << "# config_hash=" << hash << "\n";
  out << "# k=" << t.k << " n_examples=" << t.n_examples << "\n";
  out << "layer,pct_nouns,pct_verbs,pct_stop_words,pct_adverbs,pct_adjectives,pct_punct_marks,"
         "pct_other,pct_words_in_answer_span\n";
  for (std::size_t l = 0; l < t.rows.size(); ++l) {
    const auto& r = t.rows[l];
    out << l << "," << fmt_double(r.pct_nouns) << "," << fmt_double(r.pct_verbs) << ","
        << fmt_double(r.pct_stopwords) << "," << fmt_double(r.pct_adverbs) << ","
        << fmt_double(r.pct_adjectives) << "," << fmt_double(r.pct_punct) << ","
        << fmt_double(r.pct_other) << "," << fmt_double(r.pct_answer_span) << "\n";
  }
  if (!out) throw DataError("write failed for " + path);
}

json quantifier_to_json(const QuantifierReport& q, const std::string& hash) {
  json j;
  j["config_hash"] = hash;
  j["empty"] = q.empty;
  j["n_questions"] = q.n_questions;
  j["ratio_per_layer"] = q.ratio_per_layer;
  j["em_quantifier"] = q.em_quantifier;
  j["confidence_quantifier_multi_numeric"] = q.conf_quantifier_multi_numeric;
  j["confidence_non_quantifier"] = q.conf_non_quantifier;
  return j;
}

std::string heatmap_filename(HeatmapMode mode, int k) {
  switch (mode) {
    case HeatmapMode::full: return "heatmap_full.csv";
    case HeatmapMode::topk_retained: return "heatmap_retained_top" + std::to_string(k) + ".csv";
    case HeatmapMode::topk_removed: return "heatmap_removed_top" + std::to_string(k) + ".csv";
  }
  throw std::logic_error("bad heatmap mode");
}

void emit_heatmaps(const AlignedDump& ad, const RunConfig& cfg, const std::string& dir,
                   std::optional<HeatmapMode> only_mode, int k, std::vector<std::string>* files) {
  for (const HeatmapMode mode :
       {HeatmapMode::full, HeatmapMode::topk_retained, HeatmapMode::topk_removed}) {
    if (only_mode && *only_mode != mode) continue;
    const JsdHeatmap hm = jsd_heatmap(ad.importances, mode, k);
    const std::string name = heatmap_filename(mode, k);
    write_heatmap(hm, dir + "/" + name, cfg.hash());
    if (files) files->push_back(name);
  }
}

void emit_stats(const AlignedDump& ad, const RunConfig& cfg, const std::string& dir,
                std::vector<std::string>* files) {
  const CategoryStatsTable sem =
      category_stats(ad.raw, ad.importances, ad.spans, cfg.analysis.k_top, cfg.analysis.window,
                     cfg.analysis.overlap_excludes_stopwords);
  write_category_stats(sem, dir + "/semantic_stats.csv", cfg.hash());
  const PosStatsTable pos = pos_stats(ad.raw, ad.importances, ad.spans, cfg.analysis.k_top);
  write_pos_stats(pos, dir + "/pos_stats.csv", cfg.hash());
  if (files) {
    files->push_back("semantic_stats.csv");
    files->push_back("pos_stats.csv");
  }
}

void emit_quantifier(const AlignedDump& ad, const RunConfig& cfg, const std::string& dir,
                     std::vector<std::string>* files) {
  const QuantifierReport q =
      quantifier_report(ad.raw, ad.importances, ad.outcomes, cfg.analysis.k_top);
  write_json_file(quantifier_to_json(q, cfg.hash()), dir + "/quantifier_report.json");
  if (files) files->push_back("quantifier_report.json");
}

std::string emit_embeddings(const RunConfig& cfg, const std::string& dir,
                            const std::string& example_id) {
  const std::vector<RawExample> dev = load_raw(cfg.paths.dev_dataset, "gen-data");
  const RawExample* raw = nullptr;
  for (const auto& ex : dev)
    if (ex.id == example_id) raw = &ex;
  if (!raw)
    throw DataError("example " + example_id + " not found in " + cfg.paths.dev_dataset);

  const Vocabulary vocab = load_vocab_checked(cfg);
  const Model model = load_checkpoint(cfg);
  EncodeOptions opt;
  opt.overlap_excludes_stopwords = cfg.analysis.overlap_excludes_stopwords;
  const EncodedExample enc = encode_example(*raw, vocab, cfg.model.max_seq_len, opt);

  const ForwardResult fwd = forward_full(model, enc);
  ExampleSpans span;
  if (cfg.analysis.span_source == SpanSource::gold) {
    span = {enc.gold_span.begin - enc.passage_range.begin,
            enc.gold_span.end - 1 - enc.passage_range.begin};
  } else {
    const SpanPrediction pred = predict_span(fwd.logits, enc.passage_range, cfg.max_answer_len);
    span = {pred.start - enc.passage_range.begin, pred.end - enc.passage_range.begin};
  }
  const std::string name = "embeddings_" + example_id + ".tsv";
  export_layer_embeddings(model, enc, vocab, span, cfg.analysis.window, dir + "/" + name,
                          cfg.hash());
  return name;
}

}  // namespace

void write_heatmap(const JsdHeatmap& hm, const std::string& path, const std::string& config_hash) {
  hm.validate();
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path);
  out << "# config_hash=" << config_hash << "\n";
  out << "# mode=" << heatmap_mode_name(hm.mode) << " k=" << hm.k
      << " n_examples=" << hm.n_examples << " n_layers=" << hm.n_layers << "\n";
  for (int i = 0; i < hm.n_layers; ++i) {
    for (int j = 0; j < hm.n_layers; ++j) {
      if (j) out << ",";
      out << fmt_double(hm.at(i, j));
    }
    out << "\n";
  }
  if (!out) throw DataError("write failed for " + path);

  json meta;
  meta["config_hash"] = config_hash;
  meta["mode"] = heatmap_mode_name(hm.mode);
  meta["k"] = hm.k;
  meta["n_examples"] = hm.n_examples;
  meta["n_layers"] = hm.n_layers;
  meta["min"] = hm.min_value();
  meta["max"] = hm.max_value();
  write_json_file(meta, path + ".meta.json");
}

void cmd_gen_data(const RunConfig& cfg) {
  GenConfig gen;
  gen.n_train = cfg.corpus.n_train;
  gen.n_dev = cfg.corpus.n_dev;
  gen.seed = sub_seed(cfg.seed, "corpus");
  gen.n_numeric_distractors = cfg.corpus.n_numeric_distractors;
  gen.passage_sentences = cfg.corpus.passage_sentences;

  const auto [train, dev] = generate_corpus(gen);
  ensure_parent_dir(cfg.paths.train_dataset);
  ensure_parent_dir(cfg.paths.dev_dataset);
  save_dataset(train, cfg.paths.train_dataset);
  save_dataset(dev, cfg.paths.dev_dataset);
}

EvalResult cmd_train(const RunConfig& cfg) {
  const std::vector<RawExample> train_raw = load_raw(cfg.paths.train_dataset, "gen-data");
  const std::vector<RawExample> dev_raw = load_raw(cfg.paths.dev_dataset, "gen-data");

  const Vocabulary vocab = build_vocab(train_raw, cfg.corpus.min_count);
  ensure_parent_dir(cfg.paths.vocab);
  save_vocab(vocab, cfg.paths.vocab, cfg.hash());

  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.seed = sub_seed(cfg.seed, "init");
  const Model initial = init_model(mc);

  const std::vector<EncodedExample> train_set = encode_all(train_raw, vocab, cfg);
  const std::vector<EncodedExample> dev_set = encode_all(dev_raw, vocab, cfg);

  Hyperparams hp = cfg.train_hp;
  hp.seed = sub_seed(cfg.seed, "train");
  const TrainResult result = train(initial, train_set, dev_set, hp, cfg.max_answer_len);

  ensure_parent_dir(cfg.paths.checkpoint);
  save_model(result.model, cfg.paths.checkpoint, cfg.hash());

  json history = json::array();
  for (const EpochMetrics& em : result.history) {
    json h = {{"epoch", em.epoch}, {"mean_loss", em.mean_loss}};
    if (em.has_eval) {
      h["em"] = em.em;
      h["f1"] = em.f1;
      h["mean_confidence"] = em.mean_confidence;
    }
    history.push_back(std::move(h));
  }
  const EvalResult final_eval = evaluate(result.model, dev_set, cfg.max_answer_len);
  json metrics = {{"config_hash", cfg.hash()},
                  {"param_count", result.model.param_count()},
                  {"history", std::move(history)},
                  {"final", {{"em", final_eval.em},
                             {"f1", final_eval.f1},
                             {"mean_confidence", final_eval.mean_confidence}}}};
  write_json_file(metrics, cfg.paths.metrics);
  return final_eval;
}

EvalResult cmd_eval(const RunConfig& cfg) {
  const std::vector<RawExample> dev_raw = load_raw(cfg.paths.dev_dataset, "gen-data");
  const Vocabulary vocab = load_vocab_checked(cfg);
  const Model model = load_checkpoint(cfg);
  const std::vector<EncodedExample> dev_set = encode_all(dev_raw, vocab, cfg);
  const EvalResult ev = evaluate(model, dev_set, cfg.max_answer_len);
  write_json_file(eval_to_json(ev, static_cast<int>(dev_set.size()), cfg.hash()),
                  cfg.paths.eval_report);
  return ev;
}

void cmd_attribute(const RunConfig& cfg) {
  const std::vector<RawExample> dev_raw = load_raw(cfg.paths.dev_dataset, "gen-data");
  const Vocabulary vocab = load_vocab_checked(cfg);
  const Model model = load_checkpoint(cfg);

  std::size_t limit = dev_raw.size();
  if (cfg.attribution_max_examples > 0)
    limit = std::min<std::size_t>(limit, static_cast<std::size_t>(cfg.attribution_max_examples));

  ensure_parent_dir(cfg.paths.attribution);
  std::ofstream out(cfg.paths.attribution, std::ios::binary);
  if (!out) throw DataError("cannot open " + cfg.paths.attribution);

  json meta = {{"type", "meta"},
               {"config_hash", cfg.hash()},
               {"n_layers", cfg.model.n_layers},
               {"m", cfg.attribution.m},
               {"norm", norm_kind_name(cfg.attribution.norm)},
               {"target", target_kind_name(cfg.attribution.target)},
               {"span_source", span_source_name(cfg.attribution.span_source)},
               {"n_examples", limit}};
  out << meta.dump() << "\n";

  EncodeOptions opt;
  opt.overlap_excludes_stopwords = cfg.analysis.overlap_excludes_stopwords;
  for (std::size_t i = 0; i < limit; ++i) {
    const EncodedExample enc = encode_example(dev_raw[i], vocab, cfg.model.max_seq_len, opt);
    const ForwardResult fwd = forward_full(model, enc);
    const SpanPrediction pred = predict_span(fwd.logits, enc.passage_range, cfg.max_answer_len);
    const AttributionTarget target = pick_target(fwd, enc, cfg.attribution, cfg.max_answer_len);

    const int pb = enc.passage_range.begin;
    json ex = {{"type", "example"},
               {"example", enc.id},
               {"passage_len", enc.passage_range.size()},
               {"pred_span", {pred.start - pb, pred.end - pb}},
               {"gold_span", {enc.gold_span.begin - pb, enc.gold_span.end - 1 - pb}},
               {"probability", pred.probability},
               {"score", pred.score}};
    out << ex.dump() << "\n";

    for (int l = 0; l < model.config.n_layers; ++l) {
      const IgResult res = layer_integrated_gradients(model, enc, fwd, target, l, cfg.attribution);
      LayerImportance imp = importance_distribution(res.ig, enc.passage_range, cfg.attribution, l);
      const CompletenessGap gap = completeness_of(res);
      json rec = {{"type", "layer"},
                  {"example", enc.id},
                  {"layer", l},
                  {"probabilities", imp.probabilities},
                  {"raw_norms", imp.raw_norms},
                  {"degenerate", imp.degenerate},
                  {"completeness_abs", gap.absolute},
                  {"completeness_rel", gap.relative}};
      out << rec.dump() << "\n";
    }
  }
  if (!out) throw DataError("write failed for " + cfg.paths.attribution);
}

AttributionDump read_attribution_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path);

  AttributionDump dump;
  std::string line;
  long line_no = 0;
  std::unordered_map<std::string, std::size_t> index;
  bool have_meta = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "meta") {
      dump.config_hash = j.value("config_hash", "");
      dump.n_layers = j.value("n_layers", 0);
      dump.m = j.value("m", 0);
      dump.norm = j.value("norm", "");
      dump.target = j.value("target", "");
      dump.span_source = j.value("span_source", "");
      have_meta = true;
    } else if (type == "example") {
      DumpExample ex;
      ex.id = j.at("example").get<std::string>();
      ex.passage_len = j.at("passage_len").get<int>();
      const auto pred = j.at("pred_span").get<std::vector<int>>();
      const auto gold = j.at("gold_span").get<std::vector<int>>();
      if (pred.size() != 2 || gold.size() != 2)
        throw DataError(path + ":" + std::to_string(line_no) + ": bad span arrays");
      ex.pred_start = pred[0];
      ex.pred_end = pred[1];
      ex.gold_start = gold[0];
      ex.gold_end = gold[1];
      ex.probability = j.at("probability").get<double>();
      ex.score = j.at("score").get<double>();
      index[ex.id] = dump.examples.size();
      dump.examples.push_back(std::move(ex));
    } else if (type == "layer") {
      const std::string id = j.at("example").get<std::string>();
      const auto it = index.find(id);
      if (it == index.end())
        throw DataError(path + ":" + std::to_string(line_no) + ": layer record for unknown example " + id);
      LayerImportance imp;
      imp.layer = j.at("layer").get<int>();
      imp.probabilities = j.at("probabilities").get<std::vector<double>>();
      imp.raw_norms = j.at("raw_norms").get<std::vector<double>>();
      imp.degenerate = j.at("degenerate").get<bool>();
      imp.completeness_abs = j.at("completeness_abs").get<double>();
      imp.completeness_rel = j.at("completeness_rel").get<double>();
      dump.examples[it->second].layers.push_back(std::move(imp));
    } else {
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown record type \"" + type + "\"");
    }
  }
  if (!have_meta) throw DataError(path + ": missing meta record");
  for (const DumpExample& ex : dump.examples)
    if (static_cast<int>(ex.layers.size()) != dump.n_layers)
      throw DataError(path + ": example " + ex.id + " has " + std::to_string(ex.layers.size()) +
                      " layer records, expected " + std::to_string(dump.n_layers));
  return dump;
}

void cmd_heatmap(const RunConfig& cfg, std::optional<HeatmapMode> mode, std::optional<int> k) {
  const AlignedDump ad = load_aligned_dump(cfg);
  emit_heatmaps(ad, cfg, cfg.paths.workdir, mode, k.value_or(cfg.analysis.k_jsd), nullptr);
}

void cmd_stats(const RunConfig& cfg) {
  const AlignedDump ad = load_aligned_dump(cfg);
  emit_stats(ad, cfg, cfg.paths.workdir, nullptr);
}

void cmd_quantifier(const RunConfig& cfg) {
  const AlignedDump ad = load_aligned_dump(cfg);
  emit_quantifier(ad, cfg, cfg.paths.workdir, nullptr);
}

void cmd_export_embeddings(const RunConfig& cfg, const std::string& example_id) {
  emit_embeddings(cfg, cfg.paths.workdir, example_id);
}

void cmd_report(const RunConfig& cfg) {
  require_artifact(cfg.paths.metrics, "train");
  require_artifact(cfg.paths.attribution, "attribute");

  const std::string dir = cfg.paths.reports_dir;
  fs::create_directories(dir);
  std::vector<std::string> files;

  const AlignedDump ad = load_aligned_dump(cfg);
  emit_heatmaps(ad, cfg, dir, {}, cfg.analysis.k_jsd, &files);
  emit_stats(ad, cfg, dir, &files);
  emit_quantifier(ad, cfg, dir, &files);

  if (!ad.dump.examples.empty())
    files.push_back(emit_embeddings(cfg, dir, ad.dump.examples.front().id));

  // fresh eval so the report is self-contained
  const std::vector<RawExample> dev_raw = load_raw(cfg.paths.dev_dataset, "gen-data");
  const Vocabulary vocab = load_vocab_checked(cfg);
  const Model model = load_checkpoint(cfg);
  const std::vector<EncodedExample> dev_set = encode_all(dev_raw, vocab, cfg);
  const EvalResult ev = evaluate(model, dev_set, cfg.max_answer_len);
  write_json_file(eval_to_json(ev, static_cast<int>(dev_set.size()), cfg.hash()),
                  dir + "/eval.json");
  files.push_back("eval.json");

  json metrics = read_json_file(cfg.paths.metrics);
  check_hash(cfg.paths.metrics, metrics.value("config_hash", ""), cfg.hash());
  write_json_file(metrics, dir + "/train_metrics.json");
  files.push_back("train_metrics.json");

  json manifest;
  manifest["config_hash"] = cfg.hash();
  manifest["config"] = json::parse(cfg.to_canonical_json());
  std::sort(files.begin(), files.end());
  manifest["files"] = files;
  manifest["n_examples_attributed"] = ad.dump.examples.size();
  manifest["invariants_checked"] = {
      "heatmaps symmetric with zero diagonal and entries in [0,1]",
      "importance distributions nonnegative and normalized",
      "category and pos percentages within [0,100]",
      "pos classes sum to 100 per layer",
      "quantifier ratios within [0,1]"};
  write_json_file(manifest, dir + "/report.json");
}

}  // namespace iglab::pipeline
