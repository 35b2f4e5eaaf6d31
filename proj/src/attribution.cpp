#include "iglab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iglab {

namespace {

// Differentiable target scalar for a fixed span: either the raw logit sum or
// the log-probability with softmaxes restricted to the passage.
NodeRef target_node(Recording& rec, const GraphBuild& g, AttributionTarget target,
                    TargetKind kind, IndexRange passage_range) {
  if (kind == TargetKind::logit_sum) return span_score_node(rec, g, target.start, target.end);
  const long b = passage_range.begin, e = passage_range.end;
  const NodeRef s_passage = rec.slice(g.start_logits, b, e);
  const NodeRef e_passage = rec.slice(g.end_logits, b, e);
  const NodeRef nll = rec.add(rec.cross_entropy(s_passage, target.start - b),
                              rec.cross_entropy(e_passage, target.end - b));
  return rec.scale(nll, -1.0);
}

}  // namespace

const char* norm_kind_name(NormKind k) { return k == NormKind::l2 ? "l2" : "squared-l2"; }

NormKind norm_kind_from_name(const std::string& s) {
  if (s == "l2") return NormKind::l2;
  if (s == "squared-l2") return NormKind::squared_l2;
  throw std::invalid_argument("unknown norm kind: " + s + " (expected l2 or squared-l2)");
}

const char* target_kind_name(TargetKind k) {
  return k == TargetKind::logit_sum ? "logit-sum" : "log-prob";
}

TargetKind target_kind_from_name(const std::string& s) {
  if (s == "logit-sum") return TargetKind::logit_sum;
  if (s == "log-prob") return TargetKind::log_prob;
  throw std::invalid_argument("unknown target kind: " + s + " (expected logit-sum or log-prob)");
}

const char* span_source_name(SpanSource s) {
  return s == SpanSource::predicted ? "predicted" : "gold";
}

SpanSource span_source_from_name(const std::string& s) {
  if (s == "predicted") return SpanSource::predicted;
  if (s == "gold") return SpanSource::gold;
  throw std::invalid_argument("unknown span source: " + s + " (expected predicted or gold)");
}

void AttributionConfig::validate() const {
  if (m < 1) throw std::invalid_argument("attribution config: m must be >= 1, got " + std::to_string(m));
}

IgResult integrated_gradients(const ScoreGraphFn& score_fn, const Tensor& input, int m) {
  if (m < 1) throw std::invalid_argument("integrated_gradients: m must be >= 1");

  IgResult out;
  Tensor grad_sum = Tensor::zeros(input.shape);
  for (int k = 1; k <= m; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(m);
    Recording rec;
    const NodeRef leaf = rec.leaf(t_scale(input, alpha));
    const NodeRef score = score_fn(rec, leaf);
    if (k == m) out.score_input = rec.value(score).item();
    GradientMap grads = rec.backward(score);
    t_add_inplace(grad_sum, grads.at(leaf));
  }
  {
    Recording rec;
    const NodeRef leaf = rec.leaf(Tensor::zeros(input.shape));
    const NodeRef score = score_fn(rec, leaf);
    out.score_baseline = rec.value(score).item();
  }
  out.ig = t_mul(input, t_scale(grad_sum, 1.0 / static_cast<double>(m)));
  return out;
}

AttributionTarget pick_target(const ForwardResult& fwd, const EncodedExample& encoded,
                              const AttributionConfig& cfg, int max_answer_len) {
  if (cfg.span_source == SpanSource::gold)
    return AttributionTarget{encoded.gold_span.begin, encoded.gold_span.end - 1};
  const SpanPrediction pred = predict_span(fwd.logits, encoded.passage_range, max_answer_len);
  return AttributionTarget{pred.start, pred.end};
}

IgResult layer_integrated_gradients(const Model& model, const EncodedExample& encoded,
                                    const ForwardResult& fwd, AttributionTarget target, int l,
                                    const AttributionConfig& cfg) {
  cfg.validate();
  if (l < 0 || l >= model.config.n_layers)
    throw std::invalid_argument("layer_integrated_gradients: layer " + std::to_string(l) +
                                " out of range");
  const Tensor& layer_input = fwd.activations.h[static_cast<std::size_t>(l)];
  const auto score_fn = [&](Recording& rec, NodeRef leaf) {
    const GraphBuild g = forward_from_layer(model, rec, l, leaf, fwd.pad_mask);
    return target_node(rec, g, target, cfg.target, encoded.passage_range);
  };
  return integrated_gradients(score_fn, layer_input, cfg.m);
}

Tensor layer_integrated_gradients(const Model& model, const EncodedExample& encoded, int l,
                                  const AttributionConfig& cfg, int max_answer_len) {
  const ForwardResult fwd = forward_full(model, encoded);
  const AttributionTarget target = pick_target(fwd, encoded, cfg, max_answer_len);
  return layer_integrated_gradients(model, encoded, fwd, target, l, cfg).ig;
}

LayerImportance importance_distribution(const Tensor& ig, IndexRange passage_range,
                                        const AttributionConfig& cfg, int layer) {
  if (passage_range.size() <= 0)
    throw std::invalid_argument("importance_distribution: empty passage range");
  if (ig.rank() != 2)
    throw std::invalid_argument("importance_distribution: ig must be rank 2, got " +
                                shape_str(ig.shape));
  if (passage_range.end > ig.shape[0])
    throw std::invalid_argument("importance_distribution: passage range exceeds seq len");

  LayerImportance imp;
  imp.layer = layer;
  const long d = ig.shape[1];
  for (int i = passage_range.begin; i < passage_range.end; ++i) {
    double sq = 0.0;
    for (long j = 0; j < d; ++j) {
      const double x = ig.at(i, j);
      sq += x * x;
    }
    imp.raw_norms.push_back(cfg.norm == NormKind::l2 ? std::sqrt(sq) : sq);
  }
  double total = 0.0;
  for (const double x : imp.raw_norms) total += x;
  if (total < 1e-12) {
    imp.degenerate = true;
    imp.probabilities.assign(imp.raw_norms.size(),
                             1.0 / static_cast<double>(imp.raw_norms.size()));
  } else {
    for (const double x : imp.raw_norms) imp.probabilities.push_back(x / total);
  }
  return imp;
}

CompletenessGap completeness_of(const IgResult& res) {
  const double delta = res.score_input - res.score_baseline;
  const double gap = std::abs(t_sum(res.ig) - delta);
  return CompletenessGap{gap, gap / std::max(std::abs(delta), 1e-8)};
}

std::vector<LayerImportance> attribute_all_layers(const Model& model,
                                                  const EncodedExample& encoded,
                                                  const AttributionConfig& cfg,
                                                  int max_answer_len) {
  cfg.validate();
  const ForwardResult fwd = forward_full(model, encoded);
  const AttributionTarget target = pick_target(fwd, encoded, cfg, max_answer_len);
  std::vector<LayerImportance> out;
  for (int l = 0; l < model.config.n_layers; ++l) {
    const IgResult res = layer_integrated_gradients(model, encoded, fwd, target, l, cfg);
    LayerImportance imp = importance_distribution(res.ig, encoded.passage_range, cfg, l);
    const CompletenessGap gap = completeness_of(res);
    imp.completeness_abs = gap.absolute;
    imp.completeness_rel = gap.relative;
    out.push_back(std::move(imp));
  }
  return out;
}

CompletenessGap completeness_gap(const Model& model, const EncodedExample& encoded, int l, int m,
                                 const AttributionConfig& cfg, int max_answer_len) {
  AttributionConfig local = cfg;
  local.m = m;
  const ForwardResult fwd = forward_full(model, encoded);
  const AttributionTarget target = pick_target(fwd, encoded, local, max_answer_len);
  return completeness_of(layer_integrated_gradients(model, encoded, fwd, target, l, local));
}

}  // namespace iglab
