#include "iglab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace iglab {

namespace {

constexpr double kLog2 = 0.69314718055994530941723212145818;  // ln 2

void check_aligned(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c)
    throw std::invalid_argument(std::string(what) + ": misaligned inputs (" + std::to_string(a) +
                                "/" + std::to_string(b) + "/" + std::to_string(c) + " entries)");
}

int check_layer_counts(const std::vector<std::vector<LayerImportance>>& importances,
                       const char* what) {
  if (importances.empty())
    throw std::invalid_argument(std::string(what) + ": no examples");
  const int n_layers = static_cast<int>(importances.front().size());
  for (const auto& ex : importances)
    if (static_cast<int>(ex.size()) != n_layers)
      throw std::invalid_argument(std::string(what) + ": inconsistent layer counts (" +
                                  std::to_string(ex.size()) + " vs " + std::to_string(n_layers) +
                                  ")");
  if (n_layers == 0) throw std::invalid_argument(std::string(what) + ": zero layers");
  return n_layers;
}

bool in_window(int idx, int span_start, int span_end, int window) {
  if (idx >= span_start && idx <= span_end) return false;  // the span itself
  return idx >= span_start - window && idx <= span_end + window;
}

}  // namespace

void Distribution::validate(const std::string& where) const {
  if (p.empty()) throw std::invalid_argument(where + ": empty distribution");
  double total = 0.0;
  for (const double x : p) {
    if (x < 0.0) throw std::invalid_argument(where + ": negative probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument(where + ": probabilities sum to " + std::to_string(total));
}

double jsd(const Distribution& p, const Distribution& q) {
  if (p.p.size() != q.p.size())
    throw std::invalid_argument("jsd: length mismatch " + std::to_string(p.p.size()) + " vs " +
                                std::to_string(q.p.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < p.p.size(); ++i) {
    const double pi = p.p[i], qi = q.p[i];
    const double mi = 0.5 * (pi + qi);
    if (pi > 0.0) acc += 0.5 * pi * std::log(pi / mi);
    if (qi > 0.0) acc += 0.5 * qi * std::log(qi / mi);
  }
  double v = acc / kLog2;
  // rounding-noise guard at the theoretical bounds
  if (v < 0.0 && v > -1e-12) v = 0.0;
  if (v > 1.0 && v < 1.0 + 1e-12) v = 1.0;
  return v;
}

std::vector<int> topk_tokens(std::span<const double> probs, int k, bool* clipped) {
  if (k < 1) throw std::invalid_argument("topk_tokens: k must be >= 1");
  if (clipped) *clipped = false;
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  if (k >= static_cast<int>(idx.size())) {
    if (clipped && k > static_cast<int>(idx.size())) *clipped = true;
    return idx;
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Distribution retain_topk(const Distribution& d, int k) {
  const int n = static_cast<int>(d.p.size());
  if (k < 1 || k > n)
    throw std::invalid_argument("retain_topk: k=" + std::to_string(k) + " out of [1," +
                                std::to_string(n) + "]");
  const std::vector<int> keep = topk_tokens(d.p, k);
  Distribution out;
  out.p.assign(d.p.size(), 0.0);
  double mass = 0.0;
  for (const int i : keep) mass += d.p[static_cast<std::size_t>(i)];
  for (const int i : keep) out.p[static_cast<std::size_t>(i)] = d.p[static_cast<std::size_t>(i)] / mass;
  return out;
}

Distribution remove_topk(const Distribution& d, int k) {
  const int n = static_cast<int>(d.p.size());
  if (k < 1 || k >= n)
    throw std::invalid_argument("remove_topk: k=" + std::to_string(k) + " out of [1," +
                                std::to_string(n) + ")");
  const std::vector<int> drop = topk_tokens(d.p, k);
  std::vector<bool> dropped(d.p.size(), false);
  for (const int i : drop) dropped[static_cast<std::size_t>(i)] = true;

  Distribution out;
  out.p.assign(d.p.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < d.p.size(); ++i)
    if (!dropped[i]) mass += d.p[i];
  if (mass <= 0.0) {
    out.degenerate = true;
    const double u = 1.0 / static_cast<double>(n - k);
    for (std::size_t i = 0; i < d.p.size(); ++i)
      if (!dropped[i]) out.p[i] = u;
    return out;
  }
  for (std::size_t i = 0; i < d.p.size(); ++i)
    if (!dropped[i]) out.p[i] = d.p[i] / mass;
  return out;
}

const char* heatmap_mode_name(HeatmapMode m) {
  switch (m) {
    case HeatmapMode::full: return "full";
    case HeatmapMode::topk_retained: return "topk-retained";
    case HeatmapMode::topk_removed: return "topk-removed";
  }
  return "?";
}

HeatmapMode heatmap_mode_from_name(const std::string& s) {
  for (const HeatmapMode m : {HeatmapMode::full, HeatmapMode::topk_retained, HeatmapMode::topk_removed})
    if (s == heatmap_mode_name(m)) return m;
  throw std::invalid_argument("unknown heatmap mode: " + s);
}

double JsdHeatmap::min_value() const {
  return *std::min_element(values.begin(), values.end());
}

double JsdHeatmap::max_value() const {
  return *std::max_element(values.begin(), values.end());
}

void JsdHeatmap::validate() const {
  if (n_layers <= 0 || values.size() != static_cast<std::size_t>(n_layers) * n_layers)
    throw std::invalid_argument("heatmap: bad dimensions");
  for (int i = 0; i < n_layers; ++i) {
    if (std::abs(at(i, i)) > 1e-12)
      throw std::invalid_argument("heatmap: nonzero diagonal at layer " + std::to_string(i));
    for (int j = 0; j < n_layers; ++j) {
      if (std::abs(at(i, j) - at(j, i)) > 1e-12)
        throw std::invalid_argument("heatmap: asymmetric at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      if (at(i, j) < 0.0 || at(i, j) > 1.0)
        throw std::invalid_argument("heatmap: entry out of [0,1] at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
    }
  }
}

JsdHeatmap jsd_heatmap(const std::vector<std::vector<LayerImportance>>& per_example_importances,
                       HeatmapMode mode, int k) {
  const int n_layers = check_layer_counts(per_example_importances, "jsd_heatmap");
  if (mode != HeatmapMode::full && k < 1)
    throw std::invalid_argument("jsd_heatmap: top-k mode needs k >= 1");

  JsdHeatmap hm;
  hm.n_layers = n_layers;
  hm.mode = mode;
  hm.k = mode == HeatmapMode::full ? 0 : k;
  hm.n_examples = static_cast<int>(per_example_importances.size());
  hm.values.assign(static_cast<std::size_t>(n_layers) * n_layers, 0.0);

  for (const auto& example : per_example_importances) {
    std::vector<Distribution> dists;
    dists.reserve(example.size());
    for (const LayerImportance& imp : example) {
      Distribution d;
      d.p = imp.probabilities;
      d.validate("jsd_heatmap input layer " + std::to_string(imp.layer));
      switch (mode) {
        case HeatmapMode::full: break;
        case HeatmapMode::topk_retained:
          d = retain_topk(d, std::min<int>(k, static_cast<int>(d.p.size())));
          break;
        case HeatmapMode::topk_removed:
          if (k < static_cast<int>(d.p.size())) {
            d = remove_topk(d, k);
          } else {
            // nothing would remain; fall back to uniform, flagged
            d.p.assign(d.p.size(), 1.0 / static_cast<double>(d.p.size()));
            d.degenerate = true;
          }
          break;
      }
      dists.push_back(std::move(d));
    }
    for (int i = 0; i < n_layers; ++i)
      for (int j = i + 1; j < n_layers; ++j) {
        const double v = jsd(dists[static_cast<std::size_t>(i)], dists[static_cast<std::size_t>(j)]);
        hm.values[static_cast<std::size_t>(i * n_layers + j)] += v;
        hm.values[static_cast<std::size_t>(j * n_layers + i)] += v;
      }
  }
  const double inv = 1.0 / static_cast<double>(hm.n_examples);
  for (double& v : hm.values) v *= inv;
  hm.validate();
  return hm;
}

void CategoryStatsTable::validate() const {
  for (const Row& r : rows)
    for (const double v : {r.pct_answer_span, r.pct_q_words, r.pct_contextual})
      if (v < 0.0 || v > 100.0)
        throw std::invalid_argument("category stats: percentage out of [0,100]");
}

CategoryStatsTable category_stats(const std::vector<RawExample>& dataset,
                                  const std::vector<std::vector<LayerImportance>>& importances,
                                  const std::vector<ExampleSpans>& spans, int k, int window,
                                  bool overlap_excludes_stopwords) {
  check_aligned(dataset.size(), importances.size(), spans.size(), "category_stats");
  const int n_layers = check_layer_counts(importances, "category_stats");
  if (k < 1 || window < 0) throw std::invalid_argument("category_stats: bad k or window");

  CategoryStatsTable table;
  table.k = k;
  table.window = window;
  table.n_examples = static_cast<int>(dataset.size());
  table.rows.resize(static_cast<std::size_t>(n_layers));

  std::vector<long> total(static_cast<std::size_t>(n_layers), 0);
  std::vector<long> in_span(static_cast<std::size_t>(n_layers), 0);
  std::vector<long> in_query(static_cast<std::size_t>(n_layers), 0);
  std::vector<long> in_context(static_cast<std::size_t>(n_layers), 0);

  for (std::size_t ex = 0; ex < dataset.size(); ++ex) {
    const std::vector<std::uint8_t> overlap =
        compute_query_overlap(dataset[ex], overlap_excludes_stopwords);
    const ExampleSpans& span = spans[ex];
    for (int l = 0; l < n_layers; ++l) {
      const LayerImportance& imp = importances[ex][static_cast<std::size_t>(l)];
      const std::vector<int> top = topk_tokens(imp.probabilities, k);
      total[static_cast<std::size_t>(l)] += static_cast<long>(top.size());
      for (const int t : top) {
        if (t >= span.answer_start && t <= span.answer_end) ++in_span[static_cast<std::size_t>(l)];
        if (t < static_cast<int>(overlap.size()) && overlap[static_cast<std::size_t>(t)])
          ++in_query[static_cast<std::size_t>(l)];
        if (in_window(t, span.answer_start, span.answer_end, window))
          ++in_context[static_cast<std::size_t>(l)];
      }
    }
  }
  for (int l = 0; l < n_layers; ++l) {
    const double denom = static_cast<double>(total[static_cast<std::size_t>(l)]);
    auto& row = table.rows[static_cast<std::size_t>(l)];
    row.pct_answer_span = 100.0 * static_cast<double>(in_span[static_cast<std::size_t>(l)]) / denom;
    row.pct_q_words = 100.0 * static_cast<double>(in_query[static_cast<std::size_t>(l)]) / denom;
    row.pct_contextual = 100.0 * static_cast<double>(in_context[static_cast<std::size_t>(l)]) / denom;
  }
  table.validate();
  return table;
}

void PosStatsTable::validate() const {
  for (const Row& r : rows) {
    double class_sum = 0.0;
    for (const double v : {r.pct_nouns, r.pct_verbs, r.pct_stopwords, r.pct_adverbs,
                           r.pct_adjectives, r.pct_punct, r.pct_other, r.pct_answer_span}) {
      if (v < 0.0 || v > 100.0)
        throw std::invalid_argument("pos stats: percentage out of [0,100]");
    }
    class_sum = r.pct_nouns + r.pct_verbs + r.pct_stopwords + r.pct_adverbs + r.pct_adjectives +
                r.pct_punct + r.pct_other;
    if (std::abs(class_sum - 100.0) > 1e-6)
      throw std::invalid_argument("pos stats: classes sum to " + std::to_string(class_sum));
  }
}

PosStatsTable pos_stats(const std::vector<RawExample>& dataset,
                        const std::vector<std::vector<LayerImportance>>& importances,
                        const std::vector<ExampleSpans>& spans, int k) {
  check_aligned(dataset.size(), importances.size(), spans.size(), "pos_stats");
  const int n_layers = check_layer_counts(importances, "pos_stats");
  if (k < 1) throw std::invalid_argument("pos_stats: k must be >= 1");

  PosStatsTable table;
  table.k = k;
  table.n_examples = static_cast<int>(dataset.size());
  table.rows.resize(static_cast<std::size_t>(n_layers));

  constexpr int kClasses = 7;
  std::vector<std::vector<long>> counts(static_cast<std::size_t>(n_layers),
                                        std::vector<long>(kClasses, 0));
  std::vector<long> total(static_cast<std::size_t>(n_layers), 0);
  std::vector<long> in_span(static_cast<std::size_t>(n_layers), 0);

  for (std::size_t ex = 0; ex < dataset.size(); ++ex) {
    const auto& anns = dataset[ex].annotations;
    if (anns.empty())
      throw std::invalid_argument("pos_stats: example " + dataset[ex].id + " has no annotations");
    const ExampleSpans& span = spans[ex];
    for (int l = 0; l < n_layers; ++l) {
      const LayerImportance& imp = importances[ex][static_cast<std::size_t>(l)];
      const std::vector<int> top = topk_tokens(imp.probabilities, k);
      total[static_cast<std::size_t>(l)] += static_cast<long>(top.size());
      for (const int t : top) {
        if (t >= static_cast<int>(anns.size()))
          throw std::invalid_argument("pos_stats: token index beyond annotations in " +
                                      dataset[ex].id);
        ++counts[static_cast<std::size_t>(l)][static_cast<std::size_t>(anns[static_cast<std::size_t>(t)].pos)];
        if (t >= span.answer_start && t <= span.answer_end) ++in_span[static_cast<std::size_t>(l)];
      }
    }
  }
  for (int l = 0; l < n_layers; ++l) {
    const double denom = static_cast<double>(total[static_cast<std::size_t>(l)]);
    const auto& c = counts[static_cast<std::size_t>(l)];
    auto& row = table.rows[static_cast<std::size_t>(l)];
    row.pct_nouns = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::noun)]) / denom;
    row.pct_verbs = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::verb)]) / denom;
    row.pct_stopwords = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::stopword)]) / denom;
    row.pct_adverbs = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::adverb)]) / denom;
    row.pct_adjectives = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::adjective)]) / denom;
    row.pct_punct = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::punct)]) / denom;
    row.pct_other = 100.0 * static_cast<double>(c[static_cast<std::size_t>(PosClass::other)]) / denom;
    row.pct_answer_span = 100.0 * static_cast<double>(in_span[static_cast<std::size_t>(l)]) / denom;
  }
  table.validate();
  return table;
}

void QuantifierReport::validate() const {
  for (const double r : ratio_per_layer)
    if (r < 0.0 || r > 1.0)
      throw std::invalid_argument("quantifier report: ratio out of [0,1]");
}

bool is_quantifier_question(const RawExample& ex) {
  if (ex.question_type == QuestionType::quantifier) return true;
  for (std::size_t i = 0; i + 1 < ex.question.size(); ++i) {
    if (ex.question[i] == "how" && (ex.question[i + 1] == "many" || ex.question[i + 1] == "much"))
      return true;
  }
  return false;
}

QuantifierReport quantifier_report(const std::vector<RawExample>& dataset,
                                   const std::vector<std::vector<LayerImportance>>& importances,
                                   const std::vector<ExampleOutcome>& outcomes, int k) {
  check_aligned(dataset.size(), importances.size(), outcomes.size(), "quantifier_report");
  const int n_layers = check_layer_counts(importances, "quantifier_report");

  QuantifierReport report;
  report.ratio_per_layer.assign(static_cast<std::size_t>(n_layers), 0.0);
  std::vector<long> ratio_n(static_cast<std::size_t>(n_layers), 0);
  long quant_total = 0, quant_correct = 0;
  double conf_multi = 0.0, conf_non = 0.0;
  long n_multi = 0, n_non = 0;

  for (std::size_t ex = 0; ex < dataset.size(); ++ex) {
    const RawExample& raw = dataset[ex];
    const ExampleOutcome& oc = outcomes[ex];
    long numeric_in_passage = 0;
    for (const auto& a : raw.annotations)
      if (a.numeric) ++numeric_in_passage;

    if (!is_quantifier_question(raw)) {
      conf_non += oc.probability;
      ++n_non;
      continue;
    }
    ++quant_total;
    if (oc.pred_start == oc.gold_start && oc.pred_end == oc.gold_end) ++quant_correct;
    if (numeric_in_passage > 1) {
      conf_multi += oc.probability;
      ++n_multi;
    }
    if (numeric_in_passage == 0) continue;  // ratio undefined, exclude

    for (int l = 0; l < n_layers; ++l) {
      const LayerImportance& imp = importances[ex][static_cast<std::size_t>(l)];
      const std::vector<int> top = topk_tokens(imp.probabilities, k);
      long numeric_in_top = 0;
      for (const int t : top)
        if (t < static_cast<int>(raw.annotations.size()) &&
            raw.annotations[static_cast<std::size_t>(t)].numeric)
          ++numeric_in_top;
      report.ratio_per_layer[static_cast<std::size_t>(l)] +=
          static_cast<double>(numeric_in_top) / static_cast<double>(numeric_in_passage);
      ++ratio_n[static_cast<std::size_t>(l)];
    }
  }

  report.n_questions = static_cast<int>(quant_total);
  if (quant_total == 0) {
    report.empty = true;
    report.ratio_per_layer.clear();
    return report;
  }
  for (int l = 0; l < n_layers; ++l) {
    if (ratio_n[static_cast<std::size_t>(l)] > 0)
      report.ratio_per_layer[static_cast<std::size_t>(l)] /=
          static_cast<double>(ratio_n[static_cast<std::size_t>(l)]);
  }
  report.em_quantifier = 100.0 * static_cast<double>(quant_correct) / static_cast<double>(quant_total);
  report.conf_quantifier_multi_numeric = n_multi > 0 ? conf_multi / static_cast<double>(n_multi) : 0.0;
  report.conf_non_quantifier = n_non > 0 ? conf_non / static_cast<double>(n_non) : 0.0;
  report.validate();
  return report;
}

void export_layer_embeddings(const Model& model, const EncodedExample& encoded,
                             const Vocabulary& vocab, const ExampleSpans& span, int window,
                             const std::string& path, const std::string& config_hash) {
  const ForwardResult fwd = forward_full(model, encoded);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_layer_embeddings: cannot open " + path);

  out << "# config_hash=" << config_hash << "\n";
  out << "layer\ttoken_index\ttoken\trole";
  for (int j = 0; j < model.config.d_model; ++j) out << "\tv" << j;
  out << "\n";

  const int pb = encoded.passage_range.begin;
  auto role_of = [&](int pos) -> const char* {
    const int id = encoded.token_ids[static_cast<std::size_t>(pos)];
    if (id == Vocabulary::kCls || id == Vocabulary::kSep || id == Vocabulary::kPad)
      return "special";
    if (!encoded.passage_range.contains(pos)) return "query";
    const int rel = pos - pb;
    if (rel >= span.answer_start && rel <= span.answer_end) return "answer";
    if (in_window(rel, span.answer_start, span.answer_end, window)) return "supporting";
    if (rel < static_cast<int>(encoded.query_overlap.size()) &&
        encoded.query_overlap[static_cast<std::size_t>(rel)])
      return "query";
    return "other";
  };

  char buf[64];
  for (std::size_t layer = 0; layer < fwd.activations.h.size(); ++layer) {
    const Tensor& h = fwd.activations.h[layer];
    for (long i = 0; i < h.shape[0]; ++i) {
      out << layer << "\t" << i << "\t"
          << vocab.word(encoded.token_ids[static_cast<std::size_t>(i)]) << "\t"
          << role_of(static_cast<int>(i));
      for (long j = 0; j < h.shape[1]; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", h.at(i, j));
        out << "\t" << buf;
      }
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("export_layer_embeddings: write failed for " + path);
}

}  // namespace iglab
