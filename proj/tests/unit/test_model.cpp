#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../support/gradcheck.hpp"
#include "iglab/model.hpp"

using namespace iglab;

namespace {

struct Fixture {
  std::vector<RawExample> train, dev;
  Vocabulary vocab;
  ModelConfig mc;
  std::vector<EncodedExample> train_enc, dev_enc;

  explicit Fixture(int n_train = 30, int n_dev = 10) {
    GenConfig gen;
    gen.n_train = n_train;
    gen.n_dev = n_dev;
    gen.seed = 7;
    auto [tr, de] = generate_corpus(gen);
    train = std::move(tr);
    dev = std::move(de);
    vocab = build_vocab(train);
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 32;
    mc.d_ff = 64;
    mc.max_seq_len = 128;
    mc.vocab_size = vocab.size();
    mc.seed = 3;
    for (const auto& ex : train) train_enc.push_back(encode_example(ex, vocab, mc.max_seq_len));
    for (const auto& ex : dev) dev_enc.push_back(encode_example(ex, vocab, mc.max_seq_len));
  }
};

long expected_param_count(const ModelConfig& c) {
  const long d = c.d_model, dff = c.d_ff;
  long n = 0;
  n += static_cast<long>(c.vocab_size) * d;  // tok_emb
  n += static_cast<long>(c.max_seq_len) * d; // pos_emb
  n += 2 * d;                                 // seg_emb
  n += 2 * d;                                 // embedding layer norm
  n += c.n_layers * (4 * (d * d + d)          // qkvo
                     + 2 * d                  // ln1
                     + d * dff + dff          // w1/b1
                     + dff * d + d            // w2/b2
                     + 2 * d);                // ln2
  n += 2 * d;      // final layer norm
  n += d * 2 + 2;  // span head
  return n;
}

}  // namespace

TEST_CASE("init is deterministic and divisibility is enforced") {
  Fixture fx;
  const Model a = init_model(fx.mc);
  const Model b = init_model(fx.mc);
  REQUIRE(a.params.size() == b.params.size());
  for (const auto& [name, t] : a.params) {
    CHECK(t.v == b.params.at(name).v);  // byte-identical
    CHECK(t.all_finite());
  }

  ModelConfig bad = fx.mc;
  bad.d_model = 65;
  bad.n_heads = 4;
  CHECK_THROWS_AS(init_model(bad), std::invalid_argument);

  ModelConfig shallow = fx.mc;
  shallow.n_layers = 1;
  CHECK_THROWS_AS(init_model(shallow), std::invalid_argument);
}

TEST_CASE("parameter count matches the closed form") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  CHECK(m.param_count() == expected_param_count(fx.mc));

  ModelConfig big = fx.mc;
  big.n_layers = 4;
  big.d_model = 64;
  big.n_heads = 4;
  big.d_ff = 256;
  CHECK(init_model(big).param_count() == expected_param_count(big));
}

TEST_CASE("forward_full shape contract and finiteness") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const EncodedExample& enc = fx.dev_enc[0];
  const ForwardResult fwd = forward_full(m, enc);
  REQUIRE(static_cast<int>(fwd.activations.h.size()) == fx.mc.n_layers + 1);
  for (const Tensor& h : fwd.activations.h) {
    CHECK(h.shape == std::vector<long>{enc.seq_len(), fx.mc.d_model});
    CHECK(h.all_finite());
  }
  CHECK(static_cast<int>(fwd.logits.start.size()) == enc.seq_len());
  CHECK(static_cast<int>(fwd.logits.end.size()) == enc.seq_len());
}

TEST_CASE("over-long input is rejected") {
  Fixture fx;
  ModelConfig tiny = fx.mc;
  tiny.max_seq_len = 8;
  const Model m = init_model(tiny);
  CHECK_THROWS_AS(forward_full(m, fx.dev_enc[0]), std::invalid_argument);
}

TEST_CASE("factorization: forward_from_layer reproduces forward_full at every layer") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  for (int e = 0; e < 3; ++e) {
    const EncodedExample& enc = fx.dev_enc[static_cast<std::size_t>(e)];
    const ForwardResult fwd = forward_full(m, enc);
    for (int l = 0; l < fx.mc.n_layers; ++l) {
      Recording rec;
      const GraphBuild g =
          forward_from_layer(m, rec, l, fwd.activations.h[static_cast<std::size_t>(l)], fwd.pad_mask);
      const SpanLogits logits = span_logits_values(rec, g);
      for (std::size_t i = 0; i < logits.start.size(); ++i) {
        CHECK(std::abs(logits.start[i] - fwd.logits.start[i]) <= 1e-12);
        CHECK(std::abs(logits.end[i] - fwd.logits.end[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("padding invariance: extending trailing padding leaves real logits unchanged") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const EncodedExample& enc = fx.dev_enc[0];

  EncodedExample padded = enc;
  for (int i = 0; i < 7; ++i) {
    padded.token_ids.push_back(Vocabulary::kPad);
    padded.segment_ids.push_back(1);
  }
  const ForwardResult a = forward_full(m, enc);
  const ForwardResult b = forward_full(m, padded);
  for (std::size_t i = 0; i < a.logits.start.size(); ++i) {
    CHECK(std::abs(a.logits.start[i] - b.logits.start[i]) <= 1e-10);
    CHECK(std::abs(a.logits.end[i] - b.logits.end[i]) <= 1e-10);
  }
}

TEST_CASE("forward_from_layer accepts an all-zero hidden state") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const EncodedExample& enc = fx.dev_enc[0];
  Recording rec;
  const GraphBuild g = forward_from_layer(
      m, rec, 0, Tensor::zeros({enc.seq_len(), fx.mc.d_model}),
      std::vector<std::uint8_t>(static_cast<std::size_t>(enc.seq_len()), 0));
  const SpanLogits logits = span_logits_values(rec, g);
  for (const double v : logits.start) CHECK(std::isfinite(v));
  for (const double v : logits.end) CHECK(std::isfinite(v));
}

TEST_CASE("forward_from_layer rejects an out-of-range layer") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  Recording rec;
  const Tensor h = Tensor::zeros({4, fx.mc.d_model});
  const std::vector<std::uint8_t> mask(4, 0);
  CHECK_THROWS_AS(forward_from_layer(m, rec, fx.mc.n_layers, h, mask), std::invalid_argument);
  CHECK_THROWS_AS(forward_from_layer(m, rec, -1, h, mask), std::invalid_argument);
}

TEST_CASE("span score gradient w.r.t. hidden matches finite differences at sampled coords") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const EncodedExample& enc = fx.dev_enc[1];
  const ForwardResult fwd = forward_full(m, enc);
  const int l = 1;
  const Tensor& hidden = fwd.activations.h[static_cast<std::size_t>(l)];
  const int s = enc.passage_range.begin + 1;
  const int e = s + 1;

  Recording rec;
  const GraphBuild g = forward_from_layer(m, rec, l, hidden, fwd.pad_mask);
  const GradientMap grads = rec.backward(span_score_node(rec, g, s, e));
  const Tensor& analytic = grads.at(g.hidden_leaf);

  const auto score_at = [&](const Tensor& h) {
    Recording r2;
    const GraphBuild g2 = forward_from_layer(m, r2, l, h, fwd.pad_mask);
    return r2.value(span_score_node(r2, g2, s, e)).item();
  };

  Rng rng(123);
  const double eps = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const long idx = static_cast<long>(rng.below(hidden.v.size()));
    Tensor probe = hidden;
    probe.v[static_cast<std::size_t>(idx)] += eps;
    const double fp = score_at(probe);
    probe.v[static_cast<std::size_t>(idx)] -= 2 * eps;
    const double fm = score_at(probe);
    const double fd = (fp - fm) / (2 * eps);
    CHECK(testsupport::rel_err(analytic.v[static_cast<std::size_t>(idx)], fd) <= 1e-4);
  }
}

TEST_CASE("predict_span picks one-hot spans and breaks ties to the lowest indices") {
  SpanLogits logits;
  logits.start.assign(10, 0.0);
  logits.end.assign(10, 0.0);
  logits.start[4] = 5.0;
  logits.end[6] = 5.0;
  const IndexRange passage{2, 9};
  const SpanPrediction pred = predict_span(logits, passage, 8);
  CHECK(pred.start == 4);
  CHECK(pred.end == 6);
  CHECK(pred.score == doctest::Approx(10.0));

  SpanLogits flat;
  flat.start.assign(10, 0.3);
  flat.end.assign(10, 0.3);
  const SpanPrediction tie = predict_span(flat, passage, 8);
  CHECK(tie.start == passage.begin);
  CHECK(tie.end == passage.begin);
}

TEST_CASE("predict_span equals exhaustive search over all valid spans") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 16;
    const IndexRange passage{2, 14};  // passage length 12
    const int max_len = 4;
    SpanLogits logits;
    for (int i = 0; i < n; ++i) {
      logits.start.push_back(rng.uniform(-3.0, 3.0));
      logits.end.push_back(rng.uniform(-3.0, 3.0));
    }
    const SpanPrediction pred = predict_span(logits, passage, max_len);

    int best_s = -1, best_e = -1;
    double best = -1e300;
    for (int s = passage.begin; s < passage.end; ++s)
      for (int e = s; e < passage.end && e - s + 1 <= max_len; ++e) {
        const double sc = logits.start[static_cast<std::size_t>(s)] +
                          logits.end[static_cast<std::size_t>(e)];
        if (sc > best) {
          best = sc;
          best_s = s;
          best_e = e;
        }
      }
    CHECK(pred.start == best_s);
    CHECK(pred.end == best_e);
    CHECK(pred.score == doctest::Approx(best).epsilon(1e-15));
    CHECK(pred.end - pred.start + 1 <= max_len);
    CHECK(pred.probability >= 0.0);
    CHECK(pred.probability <= 1.0);
  }
}

TEST_CASE("span_score worked examples and one-hot gradient") {
  SpanLogits logits;
  logits.start = {1.0, 2.0};
  logits.end = {3.0, 4.0};
  CHECK(span_score_value(logits, 0, 1) == doctest::Approx(5.0));
  CHECK(span_score_value(logits, 1, 1) == doctest::Approx(2.0 + 4.0));
  CHECK_THROWS_AS(span_score_value(logits, 1, 0), std::invalid_argument);

  // gradient of the score w.r.t. start logits is one-hot at s
  Recording rec;
  const NodeRef start = rec.leaf(Tensor::vector1d({0.5, -1.0, 2.0}));
  const NodeRef end = rec.leaf(Tensor::vector1d({1.0, 0.0, -2.0}));
  GraphBuild g;
  g.start_logits = start;
  g.end_logits = end;
  const GradientMap grads = rec.backward(span_score_node(rec, g, 1, 2));
  CHECK(grads.at(start).v == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(grads.at(end).v == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("evaluate: exact predictions give EM 100 and the F1 formula holds") {
  CHECK(span_f1(2, 3, 3, 4) == doctest::Approx(0.5));
  CHECK(span_f1(1, 1, 1, 1) == doctest::Approx(1.0));
  CHECK(span_f1(0, 1, 4, 5) == doctest::Approx(0.0));

  Fixture fx;
  const Model m = init_model(fx.mc);
  const EvalResult ev = evaluate(m, fx.dev_enc, 8);

  // brute-force metric oracle on the same predictions
  double em = 0.0, f1 = 0.0;
  for (const auto& enc : fx.dev_enc) {
    const ForwardResult fwd = forward_full(m, enc);
    const SpanPrediction pred = predict_span(fwd.logits, enc.passage_range, 8);
    const int gs = enc.gold_span.begin, ge = enc.gold_span.end - 1;
    if (pred.start == gs && pred.end == ge) em += 1.0;
    const int lo = std::max(pred.start, gs), hi = std::min(pred.end, ge);
    const int overlap = std::max(0, hi - lo + 1);
    if (overlap > 0) {
      const double p = static_cast<double>(overlap) / (pred.end - pred.start + 1);
      const double r = static_cast<double>(overlap) / (ge - gs + 1);
      f1 += 2.0 * p * r / (p + r);
    }
  }
  CHECK(ev.em == doctest::Approx(100.0 * em / fx.dev_enc.size()).epsilon(1e-12));
  CHECK(ev.f1 == doctest::Approx(100.0 * f1 / fx.dev_enc.size()).epsilon(1e-12));
}

TEST_CASE("initial loss is about 2 ln(seq_len) and training is deterministic") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const EncodedExample& enc = fx.train_enc[0];
  Recording rec;
  const TrainGraph tg = forward_training(m, rec, enc, 0.0, nullptr);
  const double loss = rec.value(tg.loss).item();
  CHECK(std::abs(loss - 2.0 * std::log(enc.seq_len())) < 0.3);

  Hyperparams hp;
  hp.epochs = 2;
  hp.batch_size = 8;
  hp.seed = 17;
  const TrainResult a = train(m, fx.train_enc, {}, hp, 8);
  const TrainResult b = train(m, fx.train_enc, {}, hp, 8);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].mean_loss == b.history[i].mean_loss);  // bitwise
  for (const auto& [name, t] : a.model.params) CHECK(t.v == b.model.params.at(name).v);
}

TEST_CASE("a single example is memorized") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  std::vector<EncodedExample> one = {fx.train_enc[0]};
  Hyperparams hp;
  hp.epochs = 200;
  hp.batch_size = 1;
  hp.learning_rate = 1e-3;
  hp.dropout = 0.0;
  hp.seed = 5;
  const TrainResult r = train(m, one, {}, hp, 8);
  CHECK(r.history.back().mean_loss < 0.01);
}

TEST_CASE("train rejects an empty dataset") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  CHECK_THROWS_AS(train(m, {}, {}, Hyperparams{}, 8), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(m, {}, 8), std::invalid_argument);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Fixture fx;
  const Model m = init_model(fx.mc);
  const std::string path =
      (std::filesystem::temp_directory_path() / "iglab_ckpt_test.json").string();
  save_model(m, path, "cafe000000000000");
  std::string hash;
  const Model loaded = load_model(path, &hash);
  CHECK(hash == "cafe000000000000");
  CHECK(loaded.config.n_layers == m.config.n_layers);
  CHECK(loaded.config.vocab_size == m.config.vocab_size);
  REQUIRE(loaded.params.size() == m.params.size());
  for (const auto& [name, t] : m.params) {
    const Tensor& lt = loaded.params.at(name);
    CHECK(lt.shape == t.shape);
    CHECK(lt.v == t.v);  // bitwise
  }
  std::filesystem::remove(path);
}
