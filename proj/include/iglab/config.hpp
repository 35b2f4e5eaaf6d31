#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "iglab/attribution.hpp"
#include "iglab/corpus.hpp"
#include "iglab/model.hpp"

namespace iglab {

// Error categories map to CLI exit codes.
struct ConfigError : std::runtime_error {  // exit 2
  using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {  // exit 3
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {  // exit 4
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::string workdir = "runs/default";
  // Resolved file locations; empty entries default under workdir.
  std::string train_dataset;
  std::string dev_dataset;
  std::string vocab;
  std::string checkpoint;
  std::string metrics;
  std::string attribution;
  std::string eval_report;
  std::string reports_dir;

  void resolve();  // fills empty entries from workdir
};

struct CorpusSection {
  int n_train = 2000;
  int n_dev = 500;
  int n_numeric_distractors = 3;
  int passage_sentences = 6;
  int min_count = 1;
};

struct AnalysisSection {
  int k_top = 5;
  int k_jsd = 2;
  int window = 5;
  SpanSource span_source = SpanSource::predicted;
  bool overlap_excludes_stopwords = false;
};

// One structured config drives the whole pipeline; unknown keys are
// rejected. All randomness flows from `seed` via named sub-seeds.
struct RunConfig {
  std::uint64_t seed = 1234;
  CorpusSection corpus;
  ModelConfig model;       // vocab_size/seed resolved at train time
  Hyperparams train_hp;
  AttributionConfig attribution;
  int attribution_max_examples = 0;  // 0 = every dev example
  AnalysisSection analysis;
  int max_answer_len = 8;
  RunPaths paths;

  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& where);

  std::string to_canonical_json() const;
  std::string hash() const;  // fnv1a-64 of the canonical form, 16 hex chars

  void validate() const;
};

}  // namespace iglab
