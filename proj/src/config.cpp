#include "iglab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "iglab/rng.hpp"

namespace iglab {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& section) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key))
      throw ConfigError("config: unknown key \"" + key + "\" in " + section);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for \"" + std::string(key) + "\": " + e.what());
  }
}

void read_string_enum(const json& j, const char* key, const std::string& section,
                      const std::function<void(const std::string&)>& apply) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string())
    throw ConfigError("config: " + section + "." + key + " must be a string");
  try {
    apply(j.at(key).get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: " + section + "." + key + ": " + e.what());
  }
}

}  // namespace

void RunPaths::resolve() {
  auto fill = [&](std::string& field, const char* name) {
    if (field.empty()) field = workdir + "/" + name;
  };
  fill(train_dataset, "train.jsonl");
  fill(dev_dataset, "dev.jsonl");
  fill(vocab, "vocab.json");
  fill(checkpoint, "model.json");
  fill(metrics, "train_metrics.json");
  fill(attribution, "attribution.jsonl");
  fill(eval_report, "eval.json");
  fill(reports_dir, "reports");
}

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.paths.resolve();
  return cfg;
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& where) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + where + ": " + e.what());
  }
  reject_unknown_keys(j, {"seed", "corpus", "model", "train", "attribution", "analysis",
                          "max_answer_len", "paths"},
                      "top level");

  RunConfig cfg;
  read_field(j, "seed", cfg.seed);
  read_field(j, "max_answer_len", cfg.max_answer_len);

  if (j.contains("corpus")) {
    const json& c = j.at("corpus");
    reject_unknown_keys(c, {"n_train", "n_dev", "n_numeric_distractors", "passage_sentences",
                            "min_count"},
                        "corpus");
    read_field(c, "n_train", cfg.corpus.n_train);
    read_field(c, "n_dev", cfg.corpus.n_dev);
    read_field(c, "n_numeric_distractors", cfg.corpus.n_numeric_distractors);
    read_field(c, "passage_sentences", cfg.corpus.passage_sentences);
    read_field(c, "min_count", cfg.corpus.min_count);
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown_keys(m, {"n_layers", "n_heads", "d_model", "d_ff", "max_seq_len"}, "model");
    read_field(m, "n_layers", cfg.model.n_layers);
    read_field(m, "n_heads", cfg.model.n_heads);
    read_field(m, "d_model", cfg.model.d_model);
    read_field(m, "d_ff", cfg.model.d_ff);
    read_field(m, "max_seq_len", cfg.model.max_seq_len);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown_keys(t, {"epochs", "batch_size", "learning_rate", "clip_norm", "dropout"},
                        "train");
    read_field(t, "epochs", cfg.train_hp.epochs);
    read_field(t, "batch_size", cfg.train_hp.batch_size);
    read_field(t, "learning_rate", cfg.train_hp.learning_rate);
    read_field(t, "clip_norm", cfg.train_hp.clip_norm);
    read_field(t, "dropout", cfg.train_hp.dropout);
  }

  if (j.contains("attribution")) {
    const json& a = j.at("attribution");
    reject_unknown_keys(a, {"m", "norm", "target", "span_source", "max_examples"}, "attribution");
    read_field(a, "m", cfg.attribution.m);
    read_field(a, "max_examples", cfg.attribution_max_examples);
    read_string_enum(a, "norm", "attribution",
                     [&](const std::string& s) { cfg.attribution.norm = norm_kind_from_name(s); });
    read_string_enum(a, "target", "attribution", [&](const std::string& s) {
      cfg.attribution.target = target_kind_from_name(s);
    });
    read_string_enum(a, "span_source", "attribution", [&](const std::string& s) {
      cfg.attribution.span_source = span_source_from_name(s);
    });
  }

  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    reject_unknown_keys(a, {"k_top", "k_jsd", "window", "span_source",
                            "overlap_excludes_stopwords"},
                        "analysis");
    read_field(a, "k_top", cfg.analysis.k_top);
    read_field(a, "k_jsd", cfg.analysis.k_jsd);
    read_field(a, "window", cfg.analysis.window);
    read_field(a, "overlap_excludes_stopwords", cfg.analysis.overlap_excludes_stopwords);
    read_string_enum(a, "span_source", "analysis", [&](const std::string& s) {
      cfg.analysis.span_source = span_source_from_name(s);
    });
  }

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown_keys(p, {"workdir", "train_dataset", "dev_dataset", "vocab", "checkpoint",
                            "metrics", "attribution", "eval_report", "reports_dir"},
                        "paths");
    read_field(p, "workdir", cfg.paths.workdir);
    read_field(p, "train_dataset", cfg.paths.train_dataset);
    read_field(p, "dev_dataset", cfg.paths.dev_dataset);
    read_field(p, "vocab", cfg.paths.vocab);
    read_field(p, "checkpoint", cfg.paths.checkpoint);
    read_field(p, "metrics", cfg.paths.metrics);
    read_field(p, "attribution", cfg.paths.attribution);
    read_field(p, "eval_report", cfg.paths.eval_report);
    read_field(p, "reports_dir", cfg.paths.reports_dir);
  }

  cfg.paths.resolve();
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str(), path);
}

void RunConfig::validate() const {
  if (corpus.n_train <= 0 || corpus.n_dev <= 0)
    throw ConfigError("config: corpus sizes must be positive");
  if (corpus.n_numeric_distractors < 0 || corpus.passage_sentences < 1)
    throw ConfigError("config: bad corpus shape settings");
  if (model.n_layers < 2) throw ConfigError("config: model.n_layers must be >= 2");
  if (model.d_model <= 0 || model.n_heads <= 0 || model.d_model % model.n_heads != 0)
    throw ConfigError("config: model.d_model must be positive and divisible by n_heads");
  if (train_hp.epochs <= 0 || train_hp.batch_size <= 0)
    throw ConfigError("config: train.epochs and train.batch_size must be positive");
  if (train_hp.dropout < 0.0 || train_hp.dropout >= 1.0)
    throw ConfigError("config: train.dropout must be in [0,1)");
  if (attribution.m < 1) throw ConfigError("config: attribution.m must be >= 1");
  if (attribution_max_examples < 0)
    throw ConfigError("config: attribution.max_examples must be >= 0");
  if (analysis.k_top < 1 || analysis.k_jsd < 1 || analysis.window < 0)
    throw ConfigError("config: analysis.k_top/k_jsd must be >= 1 and window >= 0");
  if (max_answer_len < 1) throw ConfigError("config: max_answer_len must be >= 1");
}

std::string RunConfig::to_canonical_json() const {
  json j;
  j["seed"] = seed;
  j["max_answer_len"] = max_answer_len;
  j["corpus"] = {{"n_train", corpus.n_train},
                 {"n_dev", corpus.n_dev},
                 {"n_numeric_distractors", corpus.n_numeric_distractors},
                 {"passage_sentences", corpus.passage_sentences},
                 {"min_count", corpus.min_count}};
  j["model"] = {{"n_layers", model.n_layers},
                {"n_heads", model.n_heads},
                {"d_model", model.d_model},
                {"d_ff", model.d_ff},
                {"max_seq_len", model.max_seq_len}};
  j["train"] = {{"epochs", train_hp.epochs},
                {"batch_size", train_hp.batch_size},
                {"learning_rate", train_hp.learning_rate},
                {"clip_norm", train_hp.clip_norm},
                {"dropout", train_hp.dropout}};
  j["attribution"] = {{"m", attribution.m},
                      {"norm", norm_kind_name(attribution.norm)},
                      {"target", target_kind_name(attribution.target)},
                      {"span_source", span_source_name(attribution.span_source)},
                      {"max_examples", attribution_max_examples}};
  j["analysis"] = {{"k_top", analysis.k_top},
                   {"k_jsd", analysis.k_jsd},
                   {"window", analysis.window},
                   {"span_source", span_source_name(analysis.span_source)},
                   {"overlap_excludes_stopwords", analysis.overlap_excludes_stopwords}};
  // paths are deliberately not hashed: the same experiment in a different
  // workdir is the same experiment
  return j.dump();
}

std::string RunConfig::hash() const {
  const std::uint64_t h = fnv1a64(to_canonical_json());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace iglab
