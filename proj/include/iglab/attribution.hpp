#pragma once

#include <functional>
#include <string>
#include <vector>

#include "iglab/corpus.hpp"
#include "iglab/model.hpp"
#include "iglab/tensor.hpp"

// Layer-wise integrated gradients with a zero baseline: the gradient of the
// span score is averaged over m right-endpoint interpolation steps between
// zero and the layer's input activations, multiplied elementwise by those
// activations, then normed per passage token and normalized to a probability
// distribution over the passage.
namespace iglab {

enum class NormKind { l2, squared_l2 };
enum class TargetKind { logit_sum, log_prob };
enum class SpanSource { predicted, gold };

const char* norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& s);
const char* target_kind_name(TargetKind k);
TargetKind target_kind_from_name(const std::string& s);
const char* span_source_name(SpanSource s);
SpanSource span_source_from_name(const std::string& s);

struct AttributionConfig {
  int m = 50;
  NormKind norm = NormKind::l2;
  TargetKind target = TargetKind::logit_sum;
  SpanSource span_source = SpanSource::predicted;

  void validate() const;
};

// Per-layer importance distribution over the passage tokens.
struct LayerImportance {
  int layer = 0;
  std::vector<double> probabilities;
  std::vector<double> raw_norms;
  bool degenerate = false;  // all-zero norms, fell back to uniform
  double completeness_abs = 0.0;
  double completeness_rel = 0.0;
};

// Builds the scalar score sub-graph above an input leaf.
using ScoreGraphFn = std::function<NodeRef(Recording&, NodeRef input_leaf)>;

struct IgResult {
  Tensor ig;              // same shape as the input
  double score_input = 0.0;
  double score_baseline = 0.0;
};

// Core IG integral for an arbitrary differentiable scalar functional:
// right-endpoint Riemann sum over k/m, k = 1..m, zero baseline.
IgResult integrated_gradients(const ScoreGraphFn& score_fn, const Tensor& input, int m);

// Span used as the attribution target, fixed once from the unperturbed
// forward pass and held across all interpolation steps.
struct AttributionTarget {
  int start = 0;
  int end = 0;  // inclusive
};

AttributionTarget pick_target(const ForwardResult& fwd, const EncodedExample& encoded,
                              const AttributionConfig& cfg, int max_answer_len);

// IG vectors (shape [seq_len, d_model]) for layer l. The overload taking a
// ForwardResult reuses a cached forward pass.
Tensor layer_integrated_gradients(const Model& model, const EncodedExample& encoded, int l,
                                  const AttributionConfig& cfg, int max_answer_len = 8);
IgResult layer_integrated_gradients(const Model& model, const EncodedExample& encoded,
                                    const ForwardResult& fwd, AttributionTarget target, int l,
                                    const AttributionConfig& cfg);

// Restrict to the passage, norm per token, normalize. All-zero norms give the
// uniform distribution with the degenerate flag set.
LayerImportance importance_distribution(const Tensor& ig, IndexRange passage_range,
                                        const AttributionConfig& cfg, int layer = 0);

// All layers with one cached forward pass; completeness gaps filled in.
std::vector<LayerImportance> attribute_all_layers(const Model& model,
                                                  const EncodedExample& encoded,
                                                  const AttributionConfig& cfg,
                                                  int max_answer_len = 8);

struct CompletenessGap {
  double absolute = 0.0;
  double relative = 0.0;
};

CompletenessGap completeness_of(const IgResult& res);
CompletenessGap completeness_gap(const Model& model, const EncodedExample& encoded, int l, int m,
                                 const AttributionConfig& cfg, int max_answer_len = 8);

}  // namespace iglab
