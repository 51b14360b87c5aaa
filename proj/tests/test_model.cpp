// Copyright 2026 The pinyin-mlm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "pymlm/checkpoint.h"
#include "pymlm/model.h"
#include "pymlm/optimizer.h"
#include "test_support.h"

using namespace pymlm;

namespace {

struct Fixture {
  PinyinDict dict = testing::tiny_dict();
  CharVocab vocab = build_char_vocab(testing::tiny_corpus(), 1);
  PinyinMode mode;
  PinyinVocab pv;
  TextEncoder encoder;

  explicit Fixture(PinyinMode m)
      : mode(m),
        pv(m == PinyinMode::None ? PinyinVocab() : build_pinyin_vocab(dict, m)),
        encoder(vocab, dict, m, pv) {}

  ModelConfig config(Scheme scheme, int layers, int heads, int hidden) const {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.hidden = hidden;
    cfg.ffn = 2 * hidden;
    cfg.max_len = 16;
    cfg.char_vocab_size = vocab.size();
    cfg.pinyin_mode = mode;
    if (mode != PinyinMode::None) cfg.pinyin_table_sizes = pv.table_sizes();
    cfg.scheme = scheme;
    return cfg;
  }
};

// Perturbs every tensor so that biases, norms and heads all carry signal.
template <class T>
void jitter(ModelParams<T>& p, double scale, uint64_t seed) {
  Rng rng(seed);
  for (auto& ref : p.refs()) {
    for (Eigen::Index i = 0; i < ref.value->size(); ++i) {
      ref.value->data()[i] += static_cast<T>(scale * rng.normal());
    }
  }
}

double lse(const std::vector<double>& z) {
  double m = -1e300;
  for (double v : z) m = std::max(m, v);
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

TEST_CASE("gradient matches central finite differences on every tensor") {
  Fixture fx(PinyinMode::InitFinalTone);
  ModelConfig cfg = fx.config(Scheme::ParallelOut, 1, 2, 8);
  REQUIRE(cfg.validate().empty());
  Rng init(11);
  auto params = ModelParams<double>::initialize(cfg, init);
  jitter(params, 0.3, 12);

  // Three sequences: full corruption mix, one padded, one pinyin-only.
  const TokenSequence a = fx.encoder.encode("拨打电话的波", 16);
  const TokenSequence b = pad_to(fx.encoder.encode("中国钟", 16), 8);
  const TokenSequence c = fx.encoder.encode("九就爱", 16);
  std::vector<MaskedInstance> inst;
  const std::vector<int> pa = {1, 3}, pb = {2}, pc = {1, 2};
  inst.push_back(mask_positions(a, pa, Branch::TogetherMask));
  MaskedInstance mb = mask_positions(b, pb, Branch::TokenMask);
  inst.push_back(mb);
  inst.push_back(mask_positions(c, pc, Branch::PinyinMask));
  const Batch batch = Batch::pack(inst);

  const auto loss_at = [&](const ModelParams<double>& p) {
    Rng rng(99);
    return mlm_step<double>(batch, p, cfg, true, &rng, nullptr).total;
  };
  auto grads = ModelParams<double>::zeros(cfg);
  {
    Rng rng(99);
    const auto lb = mlm_step(batch, params, cfg, true, &rng, &grads);
    REQUIRE(lb.counted_instances == 3);
    REQUIRE(lb.total > 0);
  }

  const double eps = 1e-4;
  auto prefs = params.refs();
  auto grefs = grads.refs();
  REQUIRE(prefs.size() == grefs.size());
  for (size_t t = 0; t < prefs.size(); ++t) {
    Matrix<double>& w = *prefs[t].value;
    Matrix<double> numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + eps;
      const double up = loss_at(params);
      w.data()[i] = saved - eps;
      const double down = loss_at(params);
      w.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const Matrix<double>& analytic = *grefs[t].value;
    const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(),
                                  numeric.cwiseAbs().maxCoeff());
    const double rel = scale > 1e-12 ? diff / scale : diff;
    INFO("tensor " << prefs[t].name << " rel " << rel);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("embedding is the plain sum of the four tables") {
  Fixture fx(PinyinMode::Plain);
  ModelConfig cfg = fx.config(Scheme::Parallel, 0, 1, 2);
  auto p = ModelParams<double>::zeros(cfg);
  const TokenSequence seq = fx.encoder.encode("中", 16);
  const int32_t ch = seq.char_ids[1];
  const int32_t py = seq.pinyin(1, 0);
  p.char_embed.row(ch) << 1.0, 1.0;
  p.pinyin_embeds[0].row(py) << 0.5, 0.5;
  p.pos_embed.row(1) << 0.25, 0.25;
  p.seg_embed.row(0) << 0.25, 0.25;
  const std::vector<TokenSequence> seqs = {seq};
  const Batch batch = Batch::pack(seqs);
  const Matrix<double> e = embed(batch, p, cfg);
  CHECK(e(1, 0) == 2.0);
  CHECK(e(1, 1) == 2.0);
  // [CLS] at position 0 sees only the segment row.
  CHECK(e(0, 0) == 0.25);

  // Additivity: changing only the pinyin table shifts only by that delta.
  auto q = p;
  q.pinyin_embeds[0].row(py) << 1.5, -0.5;
  const Matrix<double> e2 = embed(batch, q, cfg);
  CHECK(e2(1, 0) - e(1, 0) == doctest::Approx(1.0));
  CHECK(e2(1, 1) - e(1, 1) == doctest::Approx(-1.0));
}

TEST_CASE("embed rejects bad ids and component mismatches") {
  Fixture fx(PinyinMode::InitFinal);
  ModelConfig cfg = fx.config(Scheme::Parallel, 0, 1, 4);
  auto p = ModelParams<double>::zeros(cfg);
  std::vector<TokenSequence> seqs = {fx.encoder.encode("中", 16)};
  Batch batch = Batch::pack(seqs);
  batch.char_ids[1] = cfg.char_vocab_size;
  CHECK_THROWS_AS(embed(batch, p, cfg), InvalidArgument);

  Fixture plain(PinyinMode::Plain);
  std::vector<TokenSequence> one = {plain.encoder.encode("中", 16)};
  CHECK_THROWS_AS(embed(Batch::pack(one), p, cfg), InvalidArgument);
}

TEST_CASE("zero encoder layers is the identity") {
  Fixture fx(PinyinMode::Plain);
  ModelConfig cfg = fx.config(Scheme::Parallel, 0, 2, 8);
  Rng rng(3);
  auto p = ModelParams<double>::initialize(cfg, rng);
  std::vector<TokenSequence> seqs = {fx.encoder.encode("拨打电话", 16)};
  const Batch batch = Batch::pack(seqs);
  const Matrix<double> e = embed(batch, p, cfg);
  const auto cache = encoder_forward(e, batch, p, cfg, false, nullptr);
  CHECK(cache.output == e);
}

TEST_CASE("attention rows are distributions that ignore padding") {
  Fixture fx(PinyinMode::Plain);
  ModelConfig cfg = fx.config(Scheme::Parallel, 2, 2, 8);
  Rng rng(4);
  auto p = ModelParams<double>::initialize(cfg, rng);
  jitter(p, 0.5, 5);
  std::vector<TokenSequence> seqs = {pad_to(fx.encoder.encode("中国", 16), 7),
                                     fx.encoder.encode("打电话的波", 16)};
  const Batch batch = Batch::pack(seqs);
  const auto cache =
      encoder_forward(embed(batch, p, cfg), batch, p, cfg, false, nullptr);
  for (const auto& layer : cache.layers) {
    REQUIRE(layer.probs.size() == 4);
    for (const auto& probs : layer.probs) {
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(probs.row(i).minCoeff() >= 0.0);
      }
    }
    // Sequence 0 has [PAD] at positions 4..6.
    for (int h = 0; h < 2; ++h) {
      CHECK(layer.probs[h].rightCols(3).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("padding does not change the outputs of real tokens") {
  Fixture fx(PinyinMode::InitFinalTone);
  ModelConfig cfg = fx.config(Scheme::ParallelOut, 2, 2, 8);
  Rng rng(6);
  auto p = ModelParams<double>::initialize(cfg, rng);
  jitter(p, 0.5, 7);
  const TokenSequence seq = fx.encoder.encode("拨电话拨中", 16);
  std::vector<TokenSequence> bare = {seq};
  std::vector<TokenSequence> padded = {pad_to(seq, seq.length() + 5)};
  const Batch b1 = Batch::pack(bare);
  const Batch b2 = Batch::pack(padded);
  const auto c1 = encoder_forward(embed(b1, p, cfg), b1, p, cfg, false, nullptr);
  const auto c2 = encoder_forward(embed(b2, p, cfg), b2, p, cfg, false, nullptr);
  const double diff =
      (c1.output - c2.output.topRows(seq.length())).cwiseAbs().maxCoeff();
  CHECK(diff < 1e-12);

  // Neighbouring sequences in the same batch do not interact either.
  std::vector<TokenSequence> both = {seq, fx.encoder.encode("九就爱", 16)};
  const Batch b3 = Batch::pack(both);
  const auto c3 = encoder_forward(embed(b3, p, cfg), b3, p, cfg, false, nullptr);
  CHECK((c1.output - c3.output.topRows(seq.length())).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("evaluation forward is deterministic and dropout is seeded") {
  Fixture fx(PinyinMode::Plain);
  ModelConfig cfg = fx.config(Scheme::Parallel, 2, 2, 8);
  cfg.dropout = 0.3;
  Rng rng(8);
  auto p = ModelParams<float>::initialize(cfg, rng);
  std::vector<TokenSequence> seqs = {fx.encoder.encode("拨打电话", 16)};
  const Batch batch = Batch::pack(seqs);
  const Matrix<float> e = embed(batch, p, cfg);
  Rng r1(1), r2(2);
  const auto a = encoder_forward(e, batch, p, cfg, false, &r1);
  const auto b = encoder_forward(e, batch, p, cfg, false, &r2);
  CHECK(a.output == b.output);

  Rng s1(5), s2(5), s3(6);
  const auto t1 = encoder_forward(e, batch, p, cfg, true, &s1);
  const auto t2 = encoder_forward(e, batch, p, cfg, true, &s2);
  const auto t3 = encoder_forward(e, batch, p, cfg, true, &s3);
  CHECK(t1.output == t2.output);
  CHECK(t1.output != t3.output);
  CHECK(t1.output != a.output);
  CHECK_THROWS_AS(encoder_forward(e, batch, p, cfg, true, nullptr),
                  InvalidArgument);
}

TEST_CASE("uniform logits give log V per supervised token") {
  Fixture fx(PinyinMode::None);
  ModelConfig cfg = fx.config(Scheme::ConfusionOnly, 1, 2, 8);
  Rng rng(9);
  auto p = ModelParams<double>::initialize(cfg, rng);
  p.token_w.setZero();
  p.token_b.setZero();
  const TokenSequence seq = fx.encoder.encode("拨打电话的波", 16);
  const std::vector<int> pos = {1, 2, 4};
  std::vector<MaskedInstance> inst = {
      mask_positions(seq, pos, Branch::TokenMask)};
  const auto lb = mlm_step(Batch::pack(inst), p, cfg, false, nullptr,
                           static_cast<ModelParams<double>*>(nullptr));
  CHECK(lb.total == doctest::Approx(std::log(double(cfg.char_vocab_size))));
  CHECK(lb.token_positions == 3);
}

TEST_CASE("loss is zero with no gradient when nothing is supervised") {
  Fixture fx(PinyinMode::InitFinalTone);
  ModelConfig cfg = fx.config(Scheme::ParallelOut, 1, 2, 8);
  Rng rng(10);
  auto p = ModelParams<double>::initialize(cfg, rng);
  std::vector<MaskedInstance> inst = {
      unmasked(fx.encoder.encode("拨打电话", 16))};
  auto grads = ModelParams<double>::zeros(cfg);
  Rng drop(1);
  const auto lb = mlm_step(Batch::pack(inst), p, cfg, true, &drop, &grads);
  CHECK(lb.total == 0.0);
  CHECK(lb.counted_instances == 0);
  for (auto& ref : grads.refs()) {
    CHECK(ref.value->cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("loss averages per-instance token means across instances") {
  ModelConfig cfg;
  cfg.layers = 0;
  cfg.heads = 1;
  cfg.hidden = 2;
  cfg.ffn = 2;
  cfg.max_len = 8;
  cfg.char_vocab_size = 5;
  cfg.scheme = Scheme::ConfusionOnly;
  auto p = ModelParams<double>::zeros(cfg);
  // logits = [h0, h1, h0 + h1 + 0.5, 0, -h0]
  p.token_w << 1, 0, 1, 0, -1, 0, 1, 1, 0, 0;
  p.token_b << 0, 0, 0.5, 0, 0;

  Batch batch;
  batch.char_ids = {2, 4, 3, 2, 4, 4, 3};
  batch.segment_ids.assign(7, 0);
  batch.positions = {0, 1, 2, 0, 1, 2, 3};
  batch.offsets = {0, 3, 7};
  batch.token_labels = {kIgnore, 1, kIgnore, kIgnore, 0, 4, kIgnore};
  Matrix<double> hidden(7, 2);
  hidden << 0, 0, 1.0, -1.0, 0, 0, 0, 0, 0.3, 0.7, -2.0, 0.5, 0, 0;

  const auto ce = [&](int r, int label) {
    const double h0 = hidden(r, 0), h1 = hidden(r, 1);
    const std::vector<double> z = {h0, h1, h0 + h1 + 0.5, 0.0, -h0};
    return lse(z) - z[label];
  };
  const double expected = (ce(1, 1) + (ce(4, 0) + ce(5, 4)) / 2) / 2;
  const auto lb = mlm_loss(hidden, batch, p, cfg);
  CHECK(lb.total == doctest::Approx(expected).epsilon(1e-12));
  CHECK(lb.counted_instances == 2);
  CHECK(lb.token_positions == 3);
}

TEST_CASE("non-finite activations raise NumericError") {
  Fixture fx(PinyinMode::Plain);
  ModelConfig cfg = fx.config(Scheme::Parallel, 2, 2, 8);
  Rng rng(12);
  auto p = ModelParams<float>::initialize(cfg, rng);
  p.layers[1].w1(0, 0) = std::numeric_limits<float>::infinity();
  std::vector<TokenSequence> seqs = {fx.encoder.encode("拨打", 16)};
  const Batch batch = Batch::pack(seqs);
  try {
    encoder_forward(embed(batch, p, cfg), batch, p, cfg, false, nullptr);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule warms up then decays to zero") {
  AdamWConfig cfg;
  cfg.lr = 1.0;
  cfg.total_steps = 20;
  cfg.warmup_ratio = 0.1;  // two warmup steps
  CHECK(scheduled_lr(cfg, 1) == doctest::Approx(0.5));
  CHECK(scheduled_lr(cfg, 2) == doctest::Approx(1.0));
  CHECK(scheduled_lr(cfg, 11) == doctest::Approx(9.0 / 18.0));
  CHECK(scheduled_lr(cfg, 20) == 0.0);
}

TEST_CASE("AdamW single step matches the hand computation") {
  Matrix<double> w(1, 1), b(1, 1), gw(1, 1), gb(1, 1);
  w << 1.0;
  b << 1.0;
  gw << 1.0;
  gb << 1.0;
  std::vector<ParamRef<double>> params = {{"w", &w, true}, {"b", &b, false}};
  std::vector<ParamRef<double>> grads = {{"w", &gw, true}, {"b", &gb, false}};
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.01;
  cfg.total_steps = 1;
  cfg.warmup_ratio = 1.0;
  AdamW<double> opt(cfg, params);
  opt.step(params, grads);
  // m = 0.1, v = 0.001; bias-corrected both are 1.
  const double adam = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
  CHECK(w(0, 0) == doctest::Approx(adam * (1.0 - 1e-3 * 0.01)).epsilon(1e-14));
  CHECK(b(0, 0) == doctest::Approx(adam).epsilon(1e-14));
  CHECK(opt.last_lr() == doctest::Approx(1e-3));
}

TEST_CASE("AdamW with zero gradient and decay leaves parameters alone") {
  Matrix<double> w = Matrix<double>::Constant(2, 3, 0.7);
  Matrix<double> g = Matrix<double>::Zero(2, 3);
  std::vector<ParamRef<double>> params = {{"w", &w, true}};
  std::vector<ParamRef<double>> grads = {{"w", &g, true}};
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  cfg.total_steps = 5;
  AdamW<double> opt(cfg, params);
  for (int i = 0; i < 5; ++i) opt.step(params, grads);
  CHECK(w == Matrix<double>::Constant(2, 3, 0.7));

  // Decay alone shrinks only flagged tensors.
  Matrix<double> bias = Matrix<double>::Constant(1, 2, 0.7);
  Matrix<double> gbias = Matrix<double>::Zero(1, 2);
  std::vector<ParamRef<double>> p2 = {{"w", &w, true}, {"b", &bias, false}};
  std::vector<ParamRef<double>> g2 = {{"w", &g, true}, {"b", &gbias, false}};
  cfg.weight_decay = 0.5;
  cfg.lr = 0.1;
  cfg.total_steps = 1;
  cfg.warmup_ratio = 1.0;
  AdamW<double> opt2(cfg, p2);
  opt2.step(p2, g2);
  CHECK(w(0, 0) == doctest::Approx(0.7 * (1 - 0.1 * 0.5)));
  CHECK(bias(0, 0) == 0.7);
}

TEST_CASE("checkpoint round-trips config and parameters bit-exactly") {
  Fixture fx(PinyinMode::InitFinalTone);
  ModelConfig cfg = fx.config(Scheme::ParallelOut, 2, 2, 8);
  Rng rng(13);
  auto p = ModelParams<float>::initialize(cfg, rng);
  const Checkpoint ckpt = make_model_checkpoint(cfg, p, {{"step", 42}});
  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.meta.at("step") == 42);
  CHECK(checkpoint_config(back) == cfg);
  auto q = params_from_checkpoint<float>(back, cfg);
  auto pr = p.refs();
  auto qr = q.refs();
  for (size_t i = 0; i < pr.size(); ++i) CHECK(*pr[i].value == *qr[i].value);
  CHECK(serialize_checkpoint(make_model_checkpoint(cfg, q, {{"step", 42}})) ==
        bytes);

  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 4)),
                  ParseError);
  CHECK_THROWS_AS(parse_checkpoint("{\"format_version\":9}\n"), ParseError);
  ModelConfig other = cfg;
  other.hidden = 16;
  other.ffn = 32;
  CHECK_THROWS_AS(params_from_checkpoint<float>(back, other), ParseError);
}
