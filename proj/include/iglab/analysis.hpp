#pragma once

#include <span>
#include <string>
#include <vector>

#include "iglab/attribution.hpp"
#include "iglab/corpus.hpp"
#include "iglab/model.hpp"

// Post-attribution analyses: pairwise-layer JSD heatmaps with the
// distribution head/tail isolated, semantic and POS statistics of top-k
// words, quantifier-question ratios, and per-layer embedding export.
// Everything here is a pure function of its inputs.
namespace iglab {

struct Distribution {
  std::vector<double> p;
  bool degenerate = false;

  void validate(const std::string& where) const;  // nonnegative, sums to 1
};

// Jensen-Shannon divergence, log base 2, so values live in [0,1].
double jsd(const Distribution& p, const Distribution& q);

// Keep the k largest entries (ties to the lower index), renormalize.
Distribution retain_topk(const Distribution& d, int k);

// Zero the k largest entries, renormalize the tail. A tail with no mass
// returns the uniform distribution over the tail, degenerate-flagged.
Distribution remove_topk(const Distribution& d, int k);

// Indices of the k largest probabilities, descending probability then
// ascending index. k > length returns all indices and sets *clipped.
std::vector<int> topk_tokens(std::span<const double> probs, int k, bool* clipped = nullptr);

enum class HeatmapMode { full, topk_retained, topk_removed };
const char* heatmap_mode_name(HeatmapMode m);
HeatmapMode heatmap_mode_from_name(const std::string& s);

struct JsdHeatmap {
  int n_layers = 0;
  std::vector<double> values;  // row-major n_layers x n_layers
  HeatmapMode mode = HeatmapMode::full;
  int k = 0;  // 0 for full
  int n_examples = 0;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i * n_layers + j)]; }
  double min_value() const;
  double max_value() const;
  void validate() const;  // symmetric, zero diagonal, entries in [0,1]
};

// Per example: transform each layer's importance by mode, compute all
// pairwise JSDs, then average the per-example matrices.
JsdHeatmap jsd_heatmap(const std::vector<std::vector<LayerImportance>>& per_example_importances,
                       HeatmapMode mode, int k);

// Answer span per example in passage-relative inclusive indices (predicted
// or gold, per the configured span source).
struct ExampleSpans {
  int answer_start = 0;
  int answer_end = 0;
};

struct CategoryStatsTable {
  struct Row {
    double pct_answer_span = 0.0;
    double pct_q_words = 0.0;
    double pct_contextual = 0.0;
  };
  std::vector<Row> rows;  // one per layer
  int k = 5;
  int window = 5;
  int n_examples = 0;

  void validate() const;
};

CategoryStatsTable category_stats(const std::vector<RawExample>& dataset,
                                  const std::vector<std::vector<LayerImportance>>& importances,
                                  const std::vector<ExampleSpans>& spans, int k = 5,
                                  int window = 5, bool overlap_excludes_stopwords = false);

struct PosStatsTable {
  struct Row {
    double pct_nouns = 0.0;
    double pct_verbs = 0.0;
    double pct_stopwords = 0.0;
    double pct_adverbs = 0.0;
    double pct_adjectives = 0.0;
    double pct_punct = 0.0;
    double pct_other = 0.0;
    double pct_answer_span = 0.0;
  };
  std::vector<Row> rows;
  int k = 5;
  int n_examples = 0;

  void validate() const;  // percentages bounded; POS classes sum to 100
};

PosStatsTable pos_stats(const std::vector<RawExample>& dataset,
                        const std::vector<std::vector<LayerImportance>>& importances,
                        const std::vector<ExampleSpans>& spans, int k = 5);

// Prediction outcome per example, passage-relative inclusive spans.
struct ExampleOutcome {
  int pred_start = 0;
  int pred_end = 0;
  int gold_start = 0;
  int gold_end = 0;
  double probability = 0.0;
};

struct QuantifierReport {
  std::vector<double> ratio_per_layer;  // numeric-in-top-k / numeric-in-passage
  double em_quantifier = 0.0;           // percentage
  double conf_quantifier_multi_numeric = 0.0;
  double conf_non_quantifier = 0.0;
  int n_questions = 0;    // quantifier questions found
  bool empty = false;     // no quantifier questions in the dataset

  void validate() const;
};

bool is_quantifier_question(const RawExample& ex);

QuantifierReport quantifier_report(const std::vector<RawExample>& dataset,
                                   const std::vector<std::vector<LayerImportance>>& importances,
                                   const std::vector<ExampleOutcome>& outcomes, int k = 5);

// Per-layer, per-token embedding rows for external projection tools.
// Roles: answer / supporting / query / special / other.
void export_layer_embeddings(const Model& model, const EncodedExample& encoded,
                             const Vocabulary& vocab, const ExampleSpans& span, int window,
                             const std::string& path, const std::string& config_hash);

}  // namespace iglab
