#include "iglab/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace iglab {

namespace {

using nlohmann::json;

constexpr double kMaskFill = -1e9;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::string layer_param(int l, const char* name) {
  return "l" + std::to_string(l) + "." + name;
}

struct BuildOpts {
  int from_layer = -1;                      // -1: start at the embeddings
  const EncodedExample* encoded = nullptr;  // from-embeddings input
  NodeRef hidden_node;                      // from-layer input (already recorded)
  const std::vector<std::uint8_t>* pad_mask = nullptr;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

struct Builder {
  const Model& m;
  Recording& rec;
  const BuildOpts& opts;
  GraphBuild out;

  NodeRef p(const std::string& name) {
    auto it = out.param_nodes.find(name);
    if (it != out.param_nodes.end()) return it->second;
    const NodeRef r = rec.leaf(m.param(name));
    out.param_nodes.emplace(name, r);
    return r;
  }

  NodeRef dropout(NodeRef x) {
    if (opts.dropout <= 0.0 || opts.rng == nullptr) return x;
    const long n = rec.value(x).numel();
    std::vector<long> mask(static_cast<std::size_t>(n));
    for (auto& b : mask) b = opts.rng->uniform() < opts.dropout ? 1 : 0;
    return rec.scale(rec.masked_fill(x, mask, 0.0), 1.0 / (1.0 - opts.dropout));
  }

  // [n,n] mask marking padded key columns
  std::vector<long> score_mask(long n) const {
    std::vector<long> mask(static_cast<std::size_t>(n * n), 0);
    const auto& pad = *opts.pad_mask;
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j)
        if (pad[static_cast<std::size_t>(j)]) mask[static_cast<std::size_t>(i * n + j)] = 1;
    return mask;
  }

  NodeRef attention(int l, NodeRef x, const std::vector<long>& mask) {
    const long n = rec.value(x).shape[0];
    const int d = m.config.d_model;
    const int heads = m.config.n_heads;
    const long dh = d / heads;

    const NodeRef q = rec.add(rec.matmul(x, p(layer_param(l, "wq"))), p(layer_param(l, "bq")));
    const NodeRef k = rec.add(rec.matmul(x, p(layer_param(l, "wk"))), p(layer_param(l, "bk")));
    const NodeRef v = rec.add(rec.matmul(x, p(layer_param(l, "wv"))), p(layer_param(l, "bv")));

    std::vector<NodeRef> ctx;
    for (int h = 0; h < heads; ++h) {
      const long c0 = h * dh, c1 = (h + 1) * dh;
      const NodeRef qh = rec.slice(q, 0, n, c0, c1);
      const NodeRef kh = rec.slice(k, 0, n, c0, c1);
      const NodeRef vh = rec.slice(v, 0, n, c0, c1);
      NodeRef scores = rec.scale(rec.matmul(qh, rec.transpose(kh)),
                                 1.0 / std::sqrt(static_cast<double>(dh)));
      scores = rec.masked_fill(scores, mask, kMaskFill);
      NodeRef probs = rec.softmax(scores);
      probs = dropout(probs);
      ctx.push_back(rec.matmul(probs, vh));
    }
    const NodeRef merged = rec.concat(ctx, 1);
    return rec.add(rec.matmul(merged, p(layer_param(l, "wo"))), p(layer_param(l, "bo")));
  }

  NodeRef ffn(int l, NodeRef x) {
    const NodeRef h1 =
        rec.gelu(rec.add(rec.matmul(x, p(layer_param(l, "w1"))), p(layer_param(l, "b1"))));
    return rec.add(rec.matmul(h1, p(layer_param(l, "w2"))), p(layer_param(l, "b2")));
  }

  NodeRef block(int l, NodeRef x, const std::vector<long>& mask) {
    NodeRef attn = dropout(attention(l, x, mask));
    NodeRef h = rec.layer_norm(rec.add(x, attn), p(layer_param(l, "ln1_g")), p(layer_param(l, "ln1_b")));
    NodeRef f = dropout(ffn(l, h));
    return rec.layer_norm(rec.add(h, f), p(layer_param(l, "ln2_g")), p(layer_param(l, "ln2_b")));
  }

  NodeRef embed() {
    const EncodedExample& enc = *opts.encoded;
    const long n = enc.seq_len();
    std::vector<long> tok_ids(enc.token_ids.begin(), enc.token_ids.end());
    std::vector<long> pos_ids(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) pos_ids[static_cast<std::size_t>(i)] = i;
    std::vector<long> seg_ids(enc.segment_ids.begin(), enc.segment_ids.end());

    const NodeRef tok = rec.embedding(p("tok_emb"), tok_ids);
    const NodeRef pos = rec.embedding(p("pos_emb"), pos_ids);
    const NodeRef seg = rec.embedding(p("seg_emb"), seg_ids);
    const NodeRef sum = rec.add(rec.add(tok, pos), seg);
    return dropout(rec.layer_norm(sum, p("emb_ln_g"), p("emb_ln_b")));
  }

  void run() {
    const int n_layers = m.config.n_layers;
    NodeRef x;
    int first = 0;
    if (opts.from_layer < 0) {
      x = embed();
      out.layer_inputs.push_back(x);
    } else {
      x = opts.hidden_node;
      out.hidden_leaf = x;
      first = opts.from_layer;
    }
    const long n = rec.value(x).shape[0];
    const std::vector<long> mask = score_mask(n);
    for (int l = first; l < n_layers; ++l) {
      x = block(l, x, mask);
      if (opts.from_layer < 0) out.layer_inputs.push_back(x);
    }
    const NodeRef final_h = rec.layer_norm(x, p("final_ln_g"), p("final_ln_b"));
    const NodeRef logits2 = rec.add(rec.matmul(final_h, p("span_w")), p("span_b"));
    out.start_logits = rec.reshape(rec.slice(logits2, 0, n, 0, 1), {n});
    out.end_logits = rec.reshape(rec.slice(logits2, 0, n, 1, 2), {n});
  }
};

GraphBuild build_graph(const Model& m, Recording& rec, const BuildOpts& opts) {
  Builder b{m, rec, opts, {}};
  b.run();
  return std::move(b.out);
}

std::vector<std::uint8_t> pad_mask_for(const EncodedExample& enc) {
  std::vector<std::uint8_t> mask(enc.token_ids.size(), 0);
  for (std::size_t i = 0; i < enc.token_ids.size(); ++i)
    if (enc.token_ids[i] == Vocabulary::kPad) mask[i] = 1;
  return mask;
}

void check_input(const Model& m, const EncodedExample& enc) {
  if (enc.seq_len() > m.config.max_seq_len)
    throw std::invalid_argument("forward: example " + enc.id + " has " +
                                std::to_string(enc.seq_len()) + " tokens, max_seq_len is " +
                                std::to_string(m.config.max_seq_len));
  for (const int id : enc.token_ids)
    if (id < 0 || id >= m.config.vocab_size)
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " outside vocab of " + std::to_string(m.config.vocab_size));
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 2)
    throw std::invalid_argument("model config: n_layers must be >= 2, got " +
                                std::to_string(n_layers));
  if (n_heads <= 0 || d_model <= 0 || d_ff <= 0 || max_seq_len <= 0 || vocab_size <= 0)
    throw std::invalid_argument("model config: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
}

const Tensor& Model::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("model: unknown parameter " + name);
  return it->second;
}

long Model::param_count() const {
  long n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(config.seed);

  const long d = config.d_model, dff = config.d_ff;
  auto weight = [&](std::vector<long> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.v) x = rng.normal(0.0, 0.02);
    return t;
  };
  auto zeros = [&](std::vector<long> shape) { return Tensor::zeros(std::move(shape)); };
  auto ones = [&](std::vector<long> shape) { return Tensor::full(std::move(shape), 1.0); };

  m.params["tok_emb"] = weight({config.vocab_size, d});
  m.params["pos_emb"] = weight({config.max_seq_len, d});
  m.params["seg_emb"] = weight({2, d});
  m.params["emb_ln_g"] = ones({d});
  m.params["emb_ln_b"] = zeros({d});
  for (int l = 0; l < config.n_layers; ++l) {
    m.params[layer_param(l, "wq")] = weight({d, d});
    m.params[layer_param(l, "bq")] = zeros({d});
    m.params[layer_param(l, "wk")] = weight({d, d});
    m.params[layer_param(l, "bk")] = zeros({d});
    m.params[layer_param(l, "wv")] = weight({d, d});
    m.params[layer_param(l, "bv")] = zeros({d});
    m.params[layer_param(l, "wo")] = weight({d, d});
    m.params[layer_param(l, "bo")] = zeros({d});
    m.params[layer_param(l, "ln1_g")] = ones({d});
    m.params[layer_param(l, "ln1_b")] = zeros({d});
    m.params[layer_param(l, "w1")] = weight({d, dff});
    m.params[layer_param(l, "b1")] = zeros({dff});
    m.params[layer_param(l, "w2")] = weight({dff, d});
    m.params[layer_param(l, "b2")] = zeros({d});
    m.params[layer_param(l, "ln2_g")] = ones({d});
    m.params[layer_param(l, "ln2_b")] = zeros({d});
  }
  m.params["final_ln_g"] = ones({d});
  m.params["final_ln_b"] = zeros({d});
  m.params["span_w"] = weight({d, 2});
  m.params["span_b"] = zeros({2});
  return m;
}

ForwardResult forward_full(const Model& model, const EncodedExample& encoded) {
  check_input(model, encoded);
  Recording rec;
  BuildOpts opts;
  const std::vector<std::uint8_t> mask = pad_mask_for(encoded);
  opts.encoded = &encoded;
  opts.pad_mask = &mask;
  const GraphBuild g = build_graph(model, rec, opts);

  ForwardResult out;
  out.logits = span_logits_values(rec, g);
  for (const NodeRef r : g.layer_inputs) out.activations.h.push_back(rec.value(r));
  out.pad_mask = mask;
  return out;
}

GraphBuild forward_from_layer(const Model& model, Recording& rec, int l, NodeRef hidden,
                              const std::vector<std::uint8_t>& pad_mask) {
  if (l < 0 || l >= model.config.n_layers)
    throw std::invalid_argument("forward_from_layer: layer " + std::to_string(l) + " out of [0," +
                                std::to_string(model.config.n_layers) + ")");
  const Tensor& h = rec.value(hidden);
  if (h.rank() != 2 || h.shape[1] != model.config.d_model)
    throw std::invalid_argument("forward_from_layer: hidden shape " + shape_str(h.shape) +
                                " does not match d_model " + std::to_string(model.config.d_model));
  if (static_cast<long>(pad_mask.size()) != h.shape[0])
    throw std::invalid_argument("forward_from_layer: mask length " +
                                std::to_string(pad_mask.size()) + " vs seq len " +
                                std::to_string(h.shape[0]));
  BuildOpts opts;
  opts.from_layer = l;
  opts.hidden_node = hidden;
  opts.pad_mask = &pad_mask;
  return build_graph(model, rec, opts);
}

GraphBuild forward_from_layer(const Model& model, Recording& rec, int l, const Tensor& hidden,
                              const std::vector<std::uint8_t>& pad_mask) {
  return forward_from_layer(model, rec, l, rec.leaf(hidden), pad_mask);
}

SpanLogits span_logits_values(const Recording& rec, const GraphBuild& g) {
  return SpanLogits{rec.value(g.start_logits).v, rec.value(g.end_logits).v};
}

SpanPrediction predict_span(const SpanLogits& logits, IndexRange passage_range,
                            int max_answer_len) {
  if (passage_range.size() <= 0)
    throw std::invalid_argument("predict_span: empty passage range");
  if (max_answer_len <= 0)
    throw std::invalid_argument("predict_span: max_answer_len must be positive");

  SpanPrediction best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int s = passage_range.begin; s < passage_range.end; ++s) {
    const int e_max = std::min(passage_range.end - 1, s + max_answer_len - 1);
    for (int e = s; e <= e_max; ++e) {
      const double score = logits.start[static_cast<std::size_t>(s)] +
                           logits.end[static_cast<std::size_t>(e)];
      if (score > best_score) {
        best_score = score;
        best.start = s;
        best.end = e;
      }
    }
  }
  best.score = best_score;

  // probabilities from softmaxes restricted to the passage
  auto passage_softmax_at = [&](const std::vector<double>& row, int idx) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = passage_range.begin; i < passage_range.end; ++i)
      m = std::max(m, row[static_cast<std::size_t>(i)]);
    double z = 0.0;
    for (int i = passage_range.begin; i < passage_range.end; ++i)
      z += std::exp(row[static_cast<std::size_t>(i)] - m);
    return std::exp(row[static_cast<std::size_t>(idx)] - m) / z;
  };
  best.probability =
      passage_softmax_at(logits.start, best.start) * passage_softmax_at(logits.end, best.end);
  return best;
}

double span_score_value(const SpanLogits& logits, int s, int e) {
  if (s < 0 || e < s || e >= static_cast<int>(logits.start.size()))
    throw std::invalid_argument("span_score: invalid span (" + std::to_string(s) + "," +
                                std::to_string(e) + ")");
  return logits.start[static_cast<std::size_t>(s)] + logits.end[static_cast<std::size_t>(e)];
}

NodeRef span_score_node(Recording& rec, const GraphBuild& g, int s, int e) {
  const long n = rec.value(g.start_logits).shape[0];
  if (s < 0 || e < s || e >= n)
    throw std::invalid_argument("span_score: invalid span (" + std::to_string(s) + "," +
                                std::to_string(e) + ") for seq len " + std::to_string(n));
  return rec.add(rec.slice(g.start_logits, s, s + 1), rec.slice(g.end_logits, e, e + 1));
}

TrainGraph forward_training(const Model& model, Recording& rec, const EncodedExample& encoded,
                            double dropout, Rng* rng) {
  check_input(model, encoded);
  BuildOpts opts;
  const std::vector<std::uint8_t> mask = pad_mask_for(encoded);
  opts.encoded = &encoded;
  opts.pad_mask = &mask;
  opts.dropout = dropout;
  opts.rng = rng;
  GraphBuild g = build_graph(model, rec, opts);

  std::vector<long> logit_mask(mask.begin(), mask.end());
  const NodeRef s_masked = rec.masked_fill(g.start_logits, logit_mask, kMaskFill);
  const NodeRef e_masked = rec.masked_fill(g.end_logits, logit_mask, kMaskFill);
  const NodeRef loss = rec.add(rec.cross_entropy(s_masked, encoded.gold_span.begin),
                               rec.cross_entropy(e_masked, encoded.gold_span.end - 1));
  return TrainGraph{loss, std::move(g.param_nodes)};
}

double span_f1(int pred_start, int pred_end, int gold_start, int gold_end) {
  const int overlap =
      std::max(0, std::min(pred_end, gold_end) - std::max(pred_start, gold_start) + 1);
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / (pred_end - pred_start + 1);
  const double recall = static_cast<double>(overlap) / (gold_end - gold_start + 1);
  return 2.0 * precision * recall / (precision + recall);
}

EvalResult evaluate(const Model& model, const std::vector<EncodedExample>& dataset,
                    int max_answer_len) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  double em = 0.0, f1 = 0.0, conf = 0.0;
  for (const auto& enc : dataset) {
    const ForwardResult fwd = forward_full(model, enc);
    const SpanPrediction pred = predict_span(fwd.logits, enc.passage_range, max_answer_len);
    const int gs = enc.gold_span.begin, ge = enc.gold_span.end - 1;
    if (pred.start == gs && pred.end == ge) em += 1.0;
    f1 += span_f1(pred.start, pred.end, gs, ge);
    conf += pred.probability;
  }
  const double n = static_cast<double>(dataset.size());
  return EvalResult{100.0 * em / n, 100.0 * f1 / n, conf / n};
}

TrainResult train(const Model& model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& eval_set, const Hyperparams& hp,
                  int max_answer_len) {
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  if (hp.epochs <= 0 || hp.batch_size <= 0)
    throw std::invalid_argument("train: epochs and batch size must be positive");

  TrainResult result;
  result.model = model;
  Model& m = result.model;
  Rng rng(hp.seed);

  std::map<std::string, Tensor> adam_m, adam_v;
  for (const auto& [name, t] : m.params) {
    adam_m[name] = Tensor::zeros(t.shape);
    adam_v[name] = Tensor::zeros(t.shape);
  }
  long step = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;

    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t batch_end = std::min(order.size(), at + static_cast<std::size_t>(hp.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(batch_end - at);

      std::map<std::string, Tensor> grad_acc;
      for (std::size_t bi = at; bi < batch_end; ++bi) {
        const EncodedExample& enc = train_set[order[bi]];
        Recording rec;
        const TrainGraph tg = forward_training(m, rec, enc, hp.dropout, &rng);
        loss_sum += rec.value(tg.loss).item();
        GradientMap grads = rec.backward(tg.loss);
        for (const auto& [name, ref] : tg.param_nodes) {
          auto it = grad_acc.find(name);
          if (it == grad_acc.end())
            grad_acc.emplace(name, grads.take(ref));
          else
            t_add_inplace(it->second, grads.at(ref));
        }
      }

      // mean over the batch, then global-norm clip
      double sq_norm = 0.0;
      for (auto& [name, g] : grad_acc) {
        g = t_scale(g, inv_batch);
        sq_norm += t_dot(g, g);
      }
      const double norm = std::sqrt(sq_norm);
      const double clip_scale = (hp.clip_norm > 0.0 && norm > hp.clip_norm)
                                    ? hp.clip_norm / norm
                                    : 1.0;

      ++step;
      const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
      for (auto& [name, g0] : grad_acc) {
        Tensor& param = m.params.at(name);
        Tensor& mm = adam_m.at(name);
        Tensor& vv = adam_v.at(name);
        for (std::size_t i = 0; i < param.v.size(); ++i) {
          const double g = g0.v[i] * clip_scale;
          mm.v[i] = kAdamBeta1 * mm.v[i] + (1.0 - kAdamBeta1) * g;
          vv.v[i] = kAdamBeta2 * vv.v[i] + (1.0 - kAdamBeta2) * g * g;
          const double mhat = mm.v[i] / bc1;
          const double vhat = vv.v[i] / bc2;
          param.v[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + kAdamEps);
        }
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_loss = loss_sum / static_cast<double>(train_set.size());
    if (!eval_set.empty()) {
      const EvalResult ev = evaluate(m, eval_set, max_answer_len);
      em.has_eval = true;
      em.em = ev.em;
      em.f1 = ev.f1;
      em.mean_confidence = ev.mean_confidence;
    }
    result.history.push_back(em);
  }
  return result;
}

void save_model(const Model& model, const std::string& path, const std::string& config_hash) {
  json j;
  j["format_version"] = 1;
  j["config_hash"] = config_hash;
  j["config"] = {{"n_layers", model.config.n_layers},   {"n_heads", model.config.n_heads},
                 {"d_model", model.config.d_model},     {"d_ff", model.config.d_ff},
                 {"max_seq_len", model.config.max_seq_len},
                 {"vocab_size", model.config.vocab_size},
                 {"seed", model.config.seed}};
  json params = json::object();
  for (const auto& [name, t] : model.params) {
    params[name] = {{"shape", t.shape}, {"data", t.v}};
  }
  j["params"] = std::move(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << j.dump() << "\n";
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

Model load_model(const std::string& path, std::string* config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_model: " + path + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1)
    throw std::runtime_error("load_model: " + path + ": unsupported format version");
  if (config_hash) *config_hash = j.value("config_hash", "");

  Model m;
  const json& c = j.at("config");
  m.config.n_layers = c.at("n_layers").get<int>();
  m.config.n_heads = c.at("n_heads").get<int>();
  m.config.d_model = c.at("d_model").get<int>();
  m.config.d_ff = c.at("d_ff").get<int>();
  m.config.max_seq_len = c.at("max_seq_len").get<int>();
  m.config.vocab_size = c.at("vocab_size").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.config.validate();

  for (const auto& [name, pj] : j.at("params").items()) {
    m.params[name] = Tensor(pj.at("shape").get<std::vector<long>>(),
                            pj.at("data").get<std::vector<double>>());
  }
  return m;
}

}  // namespace iglab
