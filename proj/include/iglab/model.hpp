#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iglab/corpus.hpp"
#include "iglab/rng.hpp"
#include "iglab/tensor.hpp"

// Compact transformer encoder for extractive QA with span start/end heads.
// Forward passes record onto a Recording, and the encoder can be entered at
// any layer so the network below is treated as a black box producing input
// representations for that layer.
namespace iglab {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_seq_len = 128;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Model {
  ModelConfig config;
  std::map<std::string, Tensor> params;

  const Tensor& param(const std::string& name) const;
  long param_count() const;
};

Model init_model(const ModelConfig& config);

struct SpanLogits {
  std::vector<double> start;
  std::vector<double> end;
};

// Entry l is the input to layer l; entry n_layers is the final hidden state.
struct LayerActivations {
  std::vector<Tensor> h;
};

struct ForwardResult {
  SpanLogits logits;
  LayerActivations activations;
  std::vector<std::uint8_t> pad_mask;  // 1 = padding position
};

ForwardResult forward_full(const Model& model, const EncodedExample& encoded);

// Recorded graph handles. layer_inputs is populated only when the graph was
// built from the embeddings.
struct GraphBuild {
  NodeRef start_logits;  // rank-1 [seq_len]
  NodeRef end_logits;
  NodeRef hidden_leaf;                 // from-layer graphs only
  std::vector<NodeRef> layer_inputs;   // from-embeddings graphs only
  std::map<std::string, NodeRef> param_nodes;
};

// Runs layers l..n_layers-1 plus the span head on supplied hidden states,
// recording everything so backward() can reach `hidden`.
GraphBuild forward_from_layer(const Model& model, Recording& rec, int l, const Tensor& hidden,
                              const std::vector<std::uint8_t>& pad_mask);

// Same, continuing from a node already in the recording.
GraphBuild forward_from_layer(const Model& model, Recording& rec, int l, NodeRef hidden,
                              const std::vector<std::uint8_t>& pad_mask);

SpanLogits span_logits_values(const Recording& rec, const GraphBuild& g);

struct SpanPrediction {
  int start = 0;  // token indices, inclusive
  int end = 0;
  double score = 0.0;        // start_logit + end_logit
  double probability = 0.0;  // product of softmaxes restricted to the passage
};

// Maximizes start_logit[s] + end_logit[e] over s <= e, e-s+1 <= max_answer_len,
// both inside the passage; ties break to the lowest start then lowest end.
SpanPrediction predict_span(const SpanLogits& logits, IndexRange passage_range,
                            int max_answer_len);

double span_score_value(const SpanLogits& logits, int s, int e);

// Differentiable scalar start_logits[s] + end_logits[e].
NodeRef span_score_node(Recording& rec, const GraphBuild& g, int s, int e);

struct Hyperparams {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double clip_norm = 1.0;
  double dropout = 0.1;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  bool has_eval = false;
  double em = 0.0;
  double f1 = 0.0;
  double mean_confidence = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> history;
};

// Adam on the mean of start + end cross-entropies, global-norm clipped,
// fully seeded. eval_set may be empty (loss-only history).
TrainResult train(const Model& model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& eval_set, const Hyperparams& hp,
                  int max_answer_len);

// Single-example training loss graph (exposed for tests).
struct TrainGraph {
  NodeRef loss;
  std::map<std::string, NodeRef> param_nodes;
};
TrainGraph forward_training(const Model& model, Recording& rec, const EncodedExample& encoded,
                            double dropout, Rng* rng);

struct EvalResult {
  double em = 0.0;  // percentages
  double f1 = 0.0;
  double mean_confidence = 0.0;  // fraction in [0,1]
};

EvalResult evaluate(const Model& model, const std::vector<EncodedExample>& dataset,
                    int max_answer_len);

// Token-overlap F1 of two inclusive index spans, in [0,1].
double span_f1(int pred_start, int pred_end, int gold_start, int gold_end);

// JSON checkpoint; load(save(m)) is bit-exact.
void save_model(const Model& model, const std::string& path, const std::string& config_hash);
Model load_model(const std::string& path, std::string* config_hash = nullptr);

}  // namespace iglab
