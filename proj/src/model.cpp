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

#include "pymlm/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pymlm/vocab.h"

namespace pymlm {
namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kInitStddev = 0.02;

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
Matrix<T> truncated_normal(int rows, int cols, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(rng.truncated_normal(kInitStddev));
  }
  return m;
}

template <class T>
void add_bias(Matrix<T>& m, const Matrix<T>& bias) {
  m.rowwise() += bias.row(0);
}

// out = x W + b
template <class T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> out(x.rows(), w.cols());
  out.noalias() = x * w;
  add_bias(out, b);
  return out;
}

template <class T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gamma,
                const Matrix<T>& beta, Matrix<T>& xhat, Vector<T>& rstd,
                Matrix<T>& out) {
  const auto n = static_cast<T>(x.cols());
  xhat.resize(x.rows(), x.cols());
  rstd.resize(x.rows());
  out.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).sum() / n;
    const T var = (x.row(r).array() - mean).square().sum() / n;
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd(r) = inv;
    xhat.row(r) = (x.row(r).array() - mean) * inv;
  }
  out = xhat.array().rowwise() * gamma.row(0).array();
  out.rowwise() += beta.row(0);
}

// Returns dx; accumulates d_gamma and d_beta.
template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dout, const Matrix<T>& gamma,
                              const Matrix<T>& xhat, const Vector<T>& rstd,
                              Matrix<T>& d_gamma, Matrix<T>& d_beta) {
  d_gamma += (dout.array() * xhat.array()).colwise().sum().matrix();
  d_beta += dout.colwise().sum();
  Matrix<T> dxhat = dout.array().rowwise() * gamma.row(0).array();
  const auto n = static_cast<T>(dout.cols());
  Matrix<T> dx(dout.rows(), dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() / n;
    const T mean_dx = (dxhat.row(r).array() * xhat.row(r).array()).sum() / n;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d -
                           xhat.row(r).array() * mean_dx);
  }
  return dx;
}

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x *
         (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf =
      static_cast<T>(0.5) *
      (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) *
                static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p,
                       Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? T(0) : keep;
  }
  return mask;
}

// Scatters rows of `src` (selected by `rows`) into `dst` additively.
template <class T>
void scatter_add(Matrix<T>& dst, std::span<const int> rows,
                 const Matrix<T>& src) {
  for (size_t i = 0; i < rows.size(); ++i) {
    dst.row(rows[i]) += src.row(static_cast<Eigen::Index>(i));
  }
}

template <class T>
Matrix<T> gather(const Matrix<T>& src, std::span<const int> rows) {
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
  }
  return out;
}

void check_id(int32_t id, Eigen::Index size, const char* table) {
  if (id < 0 || id >= size) {
    throw InvalidArgument(std::string("id ") + std::to_string(id) +
                          " out of range for " + table + " table of size " +
                          std::to_string(size));
  }
}

}  // namespace

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> errors;
  if (layers < 0) errors.push_back("layers must be >= 0");
  if (heads < 1) errors.push_back("heads must be >= 1");
  if (hidden < 1) errors.push_back("hidden must be >= 1");
  if (heads >= 1 && hidden % heads != 0) {
    errors.push_back("hidden must be divisible by heads");
  }
  if (ffn < 1) errors.push_back("ffn must be >= 1");
  if (max_len < 3) errors.push_back("max_len must be >= 3");
  if (char_vocab_size < CharVocab::kNumSpecials) {
    errors.push_back("char_vocab_size must cover the special tokens");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    errors.push_back("dropout must lie in [0, 1)");
  }
  if (components() != component_count(pinyin_mode)) {
    errors.push_back("pinyin_table_sizes does not match pinyin_mode " +
                     to_string(pinyin_mode));
  }
  for (int32_t s : pinyin_table_sizes) {
    if (s < 3) errors.push_back("pinyin tables need the three reserved ids");
  }
  if ((scheme == Scheme::ConfusionOnly) != (pinyin_mode == PinyinMode::None)) {
    errors.push_back("scheme " + to_string(scheme) +
                     " is incompatible with pinyin_mode " +
                     to_string(pinyin_mode));
  }
  return errors;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"hidden", hidden},
          {"ffn", ffn},
          {"max_len", max_len},
          {"char_vocab_size", char_vocab_size},
          {"pinyin_mode", to_string(pinyin_mode)},
          {"pinyin_table_sizes", pinyin_table_sizes},
          {"dropout", dropout},
          {"scheme", to_string(scheme)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.char_vocab_size = j.at("char_vocab_size").get<int32_t>();
  c.pinyin_mode = parse_pinyin_mode(j.at("pinyin_mode").get<std::string>());
  c.pinyin_table_sizes = j.at("pinyin_table_sizes").get<std::vector<int32_t>>();
  c.dropout = j.at("dropout").get<double>();
  c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  return c;
}

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  if (const auto errors = cfg.validate(); !errors.empty()) {
    throw InvalidArgument("invalid model config: " + errors.front());
  }
  const int h = cfg.hidden;
  ModelParams p;
  p.char_embed = Matrix<T>::Zero(cfg.char_vocab_size, h);
  for (int32_t s : cfg.pinyin_table_sizes) {
    p.pinyin_embeds.push_back(Matrix<T>::Zero(s, h));
  }
  p.pos_embed = Matrix<T>::Zero(cfg.max_len, h);
  p.seg_embed = Matrix<T>::Zero(2, h);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams<T> lp;
    for (Matrix<T>* w : {&lp.wq, &lp.wk, &lp.wv, &lp.wo}) {
      *w = Matrix<T>::Zero(h, h);
    }
    for (Matrix<T>* b : {&lp.bq, &lp.bk, &lp.bv, &lp.bo, &lp.ln1_g, &lp.ln1_b,
                         &lp.b2, &lp.ln2_g, &lp.ln2_b}) {
      *b = Matrix<T>::Zero(1, h);
    }
    lp.w1 = Matrix<T>::Zero(h, cfg.ffn);
    lp.b1 = Matrix<T>::Zero(1, cfg.ffn);
    lp.w2 = Matrix<T>::Zero(cfg.ffn, h);
    p.layers.push_back(std::move(lp));
  }
  p.token_w = Matrix<T>::Zero(h, cfg.char_vocab_size);
  p.token_b = Matrix<T>::Zero(1, cfg.char_vocab_size);
  if (cfg.has_pinyin_heads()) {
    for (int32_t s : cfg.pinyin_table_sizes) {
      p.pinyin_w.push_back(Matrix<T>::Zero(h, s));
      p.pinyin_b.push_back(Matrix<T>::Zero(1, s));
    }
  }
  return p;
}

template <class T>
ModelParams<T> ModelParams<T>::initialize(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zeros(cfg);
  for (auto& ref : p.refs()) {
    if (ref.decay) {
      *ref.value = truncated_normal<T>(static_cast<int>(ref.value->rows()),
                                       static_cast<int>(ref.value->cols()),
                                       rng);
    }
  }
  for (auto& lp : p.layers) {
    lp.ln1_g.setOnes();
    lp.ln2_g.setOnes();
  }
  return p;
}

template <class T>
std::vector<ParamRef<T>> ModelParams<T>::refs() {
  std::vector<ParamRef<T>> out;
  out.push_back({"embeddings.char", &char_embed, true});
  for (size_t c = 0; c < pinyin_embeds.size(); ++c) {
    out.push_back(
        {"embeddings.pinyin." + std::to_string(c), &pinyin_embeds[c], true});
  }
  out.push_back({"embeddings.position", &pos_embed, true});
  out.push_back({"embeddings.segment", &seg_embed, true});
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer." + std::to_string(l) + ".";
    LayerParams<T>& lp = layers[l];
    out.push_back({pre + "attention.query.weight", &lp.wq, true});
    out.push_back({pre + "attention.query.bias", &lp.bq, false});
    out.push_back({pre + "attention.key.weight", &lp.wk, true});
    out.push_back({pre + "attention.key.bias", &lp.bk, false});
    out.push_back({pre + "attention.value.weight", &lp.wv, true});
    out.push_back({pre + "attention.value.bias", &lp.bv, false});
    out.push_back({pre + "attention.output.weight", &lp.wo, true});
    out.push_back({pre + "attention.output.bias", &lp.bo, false});
    out.push_back({pre + "attention.norm.gamma", &lp.ln1_g, false});
    out.push_back({pre + "attention.norm.beta", &lp.ln1_b, false});
    out.push_back({pre + "ffn.inner.weight", &lp.w1, true});
    out.push_back({pre + "ffn.inner.bias", &lp.b1, false});
    out.push_back({pre + "ffn.outer.weight", &lp.w2, true});
    out.push_back({pre + "ffn.outer.bias", &lp.b2, false});
    out.push_back({pre + "ffn.norm.gamma", &lp.ln2_g, false});
    out.push_back({pre + "ffn.norm.beta", &lp.ln2_b, false});
  }
  out.push_back({"head.token.weight", &token_w, true});
  out.push_back({"head.token.bias", &token_b, false});
  for (size_t c = 0; c < pinyin_w.size(); ++c) {
    const std::string pre = "head.pinyin." + std::to_string(c) + ".";
    out.push_back({pre + "weight", &pinyin_w[c], true});
    out.push_back({pre + "bias", &pinyin_b[c], false});
  }
  return out;
}

template <class T>
size_t ModelParams<T>::parameter_count() {
  size_t n = 0;
  for (const auto& r : refs()) n += static_cast<size_t>(r.value->size());
  return n;
}

template <class T>
bool ModelParams<T>::all_finite() {
  for (const auto& r : refs()) {
    if (!r.value->allFinite()) return false;
  }
  return true;
}

template <class T>
void ModelParams<T>::set_zero() {
  for (auto& r : refs()) r.value->setZero();
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  const auto cast = [](const Matrix<From>& m) -> Matrix<To> {
    return m.template cast<To>();
  };
  const auto cast_all = [&](const std::vector<Matrix<From>>& v) {
    std::vector<Matrix<To>> out;
    for (const auto& m : v) out.push_back(cast(m));
    return out;
  };
  ModelParams<To> q;
  q.char_embed = cast(p.char_embed);
  q.pinyin_embeds = cast_all(p.pinyin_embeds);
  q.pos_embed = cast(p.pos_embed);
  q.seg_embed = cast(p.seg_embed);
  for (const auto& lp : p.layers) {
    LayerParams<To> l;
    l.wq = cast(lp.wq);
    l.bq = cast(lp.bq);
    l.wk = cast(lp.wk);
    l.bk = cast(lp.bk);
    l.wv = cast(lp.wv);
    l.bv = cast(lp.bv);
    l.wo = cast(lp.wo);
    l.bo = cast(lp.bo);
    l.ln1_g = cast(lp.ln1_g);
    l.ln1_b = cast(lp.ln1_b);
    l.w1 = cast(lp.w1);
    l.b1 = cast(lp.b1);
    l.w2 = cast(lp.w2);
    l.b2 = cast(lp.b2);
    l.ln2_g = cast(lp.ln2_g);
    l.ln2_b = cast(lp.ln2_b);
    q.layers.push_back(std::move(l));
  }
  q.token_w = cast(p.token_w);
  q.token_b = cast(p.token_b);
  q.pinyin_w = cast_all(p.pinyin_w);
  q.pinyin_b = cast_all(p.pinyin_b);
  return q;
}

namespace {

template <class Source>
Batch pack_common(std::span<const Source> items) {
  Batch b;
  for (const auto& item : items) {
    const TokenSequence& seq = [&]() -> const TokenSequence& {
      if constexpr (std::is_same_v<Source, MaskedInstance>) {
        return item.input;
      } else {
        return item;
      }
    }();
    if (b.sequences() == 0) {
      b.components = seq.components;
    } else if (seq.components != b.components) {
      throw InvalidArgument("batch mixes pinyin component counts");
    }
    b.char_ids.insert(b.char_ids.end(), seq.char_ids.begin(),
                      seq.char_ids.end());
    b.pinyin_ids.insert(b.pinyin_ids.end(), seq.pinyin_ids.begin(),
                        seq.pinyin_ids.end());
    b.segment_ids.insert(b.segment_ids.end(), seq.segment_ids.begin(),
                         seq.segment_ids.end());
    for (int i = 0; i < seq.length(); ++i) b.positions.push_back(i);
    b.offsets.push_back(b.rows());
    if constexpr (std::is_same_v<Source, MaskedInstance>) {
      b.token_labels.insert(b.token_labels.end(), item.token_labels.begin(),
                            item.token_labels.end());
      b.pinyin_labels.insert(b.pinyin_labels.end(), item.pinyin_labels.begin(),
                             item.pinyin_labels.end());
    }
  }
  return b;
}

}  // namespace

Batch Batch::pack(std::span<const TokenSequence> seqs) {
  return pack_common(seqs);
}

Batch Batch::pack(std::span<const MaskedInstance> instances) {
  return pack_common(instances);
}

template <class T>
Matrix<T> embed(const Batch& batch, const ModelParams<T>& params,
                const ModelConfig& cfg) {
  if (batch.components != cfg.components()) {
    throw InvalidArgument("batch has " + std::to_string(batch.components) +
                          " pinyin components, model expects " +
                          std::to_string(cfg.components()));
  }
  Matrix<T> out(batch.rows(), cfg.hidden);
  for (int r = 0; r < batch.rows(); ++r) {
    check_id(batch.char_ids[r], params.char_embed.rows(), "character");
    check_id(batch.positions[r], params.pos_embed.rows(), "position");
    check_id(batch.segment_ids[r], params.seg_embed.rows(), "segment");
    out.row(r) = params.char_embed.row(batch.char_ids[r]) +
                 params.pos_embed.row(batch.positions[r]) +
                 params.seg_embed.row(batch.segment_ids[r]);
    for (int c = 0; c < batch.components; ++c) {
      const int32_t id =
          batch.pinyin_ids[static_cast<size_t>(r) * batch.components + c];
      check_id(id, params.pinyin_embeds[c].rows(), "pinyin");
      out.row(r) += params.pinyin_embeds[c].row(id);
    }
  }
  return out;
}

template <class T>
EncoderCache<T> encoder_forward(const Matrix<T>& embedded, const Batch& batch,
                                const ModelParams<T>& params,
                                const ModelConfig& cfg, bool train, Rng* rng) {
  const bool drop = train && cfg.dropout > 0;
  if (drop && rng == nullptr) {
    throw InvalidArgument("dropout requires a random stream");
  }
  const int d = cfg.hidden / cfg.heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  EncoderCache<T> cache;
  cache.embedded = embedded;
  Matrix<T> x = embedded;
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerParams<T>& lp = params.layers[l];
    LayerCache<T>& lc = cache.layers.emplace_back();
    lc.input = x;
    lc.q = affine(x, lp.wq, lp.bq);
    lc.k = affine(x, lp.wk, lp.bk);
    lc.v = affine(x, lp.wv, lp.bv);
    lc.context = Matrix<T>::Zero(x.rows(), cfg.hidden);

    for (int s = 0; s < batch.sequences(); ++s) {
      const int o = batch.offsets[s];
      const int len = batch.offsets[s + 1] - o;
      std::vector<char> valid(len);
      for (int j = 0; j < len; ++j) {
        valid[j] = batch.char_ids[o + j] != CharVocab::kPad;
      }
      for (int h = 0; h < cfg.heads; ++h) {
        Matrix<T> scores(len, len);
        scores.noalias() = lc.q.block(o, h * d, len, d) *
                           lc.k.block(o, h * d, len, d).transpose();
        scores *= scale;
        for (int i = 0; i < len; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < len; ++j) {
            if (valid[j]) mx = std::max(mx, scores(i, j));
          }
          T sum = 0;
          for (int j = 0; j < len; ++j) {
            const T e = valid[j] ? std::exp(scores(i, j) - mx) : T(0);
            scores(i, j) = e;
            sum += e;
          }
          scores.row(i) /= sum;
        }
        lc.context.block(o, h * d, len, d).noalias() =
            scores * lc.v.block(o, h * d, len, d);
        lc.probs.push_back(std::move(scores));
      }
    }

    Matrix<T> attn = affine(lc.context, lp.wo, lp.bo);
    if (drop) {
      lc.drop1 = dropout_mask<T>(attn.rows(), attn.cols(), cfg.dropout, *rng);
      attn.array() *= lc.drop1.array();
    }
    attn += x;
    layer_norm(attn, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.rstd1, lc.norm1);

    lc.pre_act = affine(lc.norm1, lp.w1, lp.b1);
    lc.act = lc.pre_act.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> ff = affine(lc.act, lp.w2, lp.b2);
    if (drop) {
      lc.drop2 = dropout_mask<T>(ff.rows(), ff.cols(), cfg.dropout, *rng);
      ff.array() *= lc.drop2.array();
    }
    ff += lc.norm1;
    layer_norm(ff, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.rstd2, x);
    if (!x.allFinite()) {
      throw NumericError("non-finite activation in encoder layer " +
                         std::to_string(l));
    }
  }
  cache.output = std::move(x);
  return cache;
}

template <class T>
void encoder_backward(const Batch& batch, const EncoderCache<T>& cache,
                      const Matrix<T>& d_output, const ModelParams<T>& params,
                      const ModelConfig& cfg, ModelParams<T>& grads) {
  const int d = cfg.hidden / cfg.heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  Matrix<T> dx = d_output;

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerParams<T>& lp = params.layers[l];
    LayerParams<T>& gp = grads.layers[l];
    const LayerCache<T>& lc = cache.layers[l];

    // Second sublayer: norm1 -> FFN -> dropout -> residual -> norm.
    Matrix<T> dy2 =
        layer_norm_backward(dx, lp.ln2_g, lc.xhat2, lc.rstd2, gp.ln2_g,
                            gp.ln2_b);
    Matrix<T> dnorm1 = dy2;
    Matrix<T> dff = dy2;
    if (lc.drop2.size() > 0) dff.array() *= lc.drop2.array();
    gp.w2.noalias() += lc.act.transpose() * dff;
    gp.b2 += dff.colwise().sum();
    Matrix<T> dact(dff.rows(), lp.w2.rows());
    dact.noalias() = dff * lp.w2.transpose();
    dact.array() *=
        lc.pre_act.unaryExpr([](T v) { return gelu_grad(v); }).array();
    gp.w1.noalias() += lc.norm1.transpose() * dact;
    gp.b1 += dact.colwise().sum();
    dnorm1.noalias() += dact * lp.w1.transpose();

    // First sublayer: input -> attention -> dropout -> residual -> norm.
    Matrix<T> dy1 = layer_norm_backward(dnorm1, lp.ln1_g, lc.xhat1, lc.rstd1,
                                        gp.ln1_g, gp.ln1_b);
    Matrix<T> dattn = dy1;
    if (lc.drop1.size() > 0) dattn.array() *= lc.drop1.array();
    gp.wo.noalias() += lc.context.transpose() * dattn;
    gp.bo += dattn.colwise().sum();
    Matrix<T> dctx(dattn.rows(), cfg.hidden);
    dctx.noalias() = dattn * lp.wo.transpose();

    Matrix<T> dq = Matrix<T>::Zero(dx.rows(), cfg.hidden);
    Matrix<T> dk = Matrix<T>::Zero(dx.rows(), cfg.hidden);
    Matrix<T> dv = Matrix<T>::Zero(dx.rows(), cfg.hidden);
    size_t idx = 0;
    for (int s = 0; s < batch.sequences(); ++s) {
      const int o = batch.offsets[s];
      const int len = batch.offsets[s + 1] - o;
      for (int h = 0; h < cfg.heads; ++h) {
        const Matrix<T>& p = lc.probs[idx++];
        const auto dc = dctx.block(o, h * d, len, d);
        Matrix<T> dp(len, len);
        dp.noalias() = dc * lc.v.block(o, h * d, len, d).transpose();
        dv.block(o, h * d, len, d).noalias() = p.transpose() * dc;
        const Vector<T> row_dot = (dp.array() * p.array()).rowwise().sum();
        Matrix<T> ds = p.array() * (dp.colwise() - row_dot).array();
        ds *= scale;
        dq.block(o, h * d, len, d).noalias() =
            ds * lc.k.block(o, h * d, len, d);
        dk.block(o, h * d, len, d).noalias() =
            ds.transpose() * lc.q.block(o, h * d, len, d);
      }
    }
    gp.wq.noalias() += lc.input.transpose() * dq;
    gp.bq += dq.colwise().sum();
    gp.wk.noalias() += lc.input.transpose() * dk;
    gp.bk += dk.colwise().sum();
    gp.wv.noalias() += lc.input.transpose() * dv;
    gp.bv += dv.colwise().sum();
    dx = dy1;
    dx.noalias() += dq * lp.wq.transpose();
    dx.noalias() += dk * lp.wk.transpose();
    dx.noalias() += dv * lp.wv.transpose();
  }

  for (int r = 0; r < batch.rows(); ++r) {
    grads.char_embed.row(batch.char_ids[r]) += dx.row(r);
    grads.pos_embed.row(batch.positions[r]) += dx.row(r);
    grads.seg_embed.row(batch.segment_ids[r]) += dx.row(r);
    for (int c = 0; c < batch.components; ++c) {
      grads.pinyin_embeds[c].row(
          batch.pinyin_ids[static_cast<size_t>(r) * batch.components + c]) +=
          dx.row(r);
    }
  }
}

template <class T>
Matrix<T> affine_logits(const Matrix<T>& hidden, std::span<const int> rows,
                        const Matrix<T>& w, const Matrix<T>& b) {
  return affine(gather(hidden, rows), w, b);
}

template <class T>
double affine_cross_entropy(const Matrix<T>& hidden, std::span<const int> rows,
                            std::span<const int32_t> labels,
                            std::span<const double> weights,
                            const Matrix<T>& w, const Matrix<T>& b,
                            Matrix<T>* d_hidden, Matrix<T>* dw, Matrix<T>* db) {
  if (rows.empty()) return 0;
  const Matrix<T> h = gather(hidden, rows);
  Matrix<T> logits = affine(h, w, b);
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int32_t label = labels[static_cast<size_t>(i)];
    check_id(label, logits.cols(), "label");
    const T mx = logits.row(i).maxCoeff();
    const double shifted = static_cast<double>(logits(i, label) - mx);
    logits.row(i).array() = (logits.row(i).array() - mx).exp();
    const T sum = logits.row(i).sum();
    const double weight = weights[static_cast<size_t>(i)];
    total += weight * (std::log(static_cast<double>(sum)) - shifted);
    if (d_hidden != nullptr) {
      logits.row(i) /= sum;
      logits(i, label) -= T(1);
      logits.row(i) *= static_cast<T>(weight);
    }
  }
  if (d_hidden != nullptr) {
    dw->noalias() += h.transpose() * logits;
    *db += logits.colwise().sum();
    Matrix<T> dh(h.rows(), h.cols());
    dh.noalias() = logits * w.transpose();
    scatter_add(*d_hidden, rows, dh);
  }
  return total;
}

template <class T>
LossBreakdown mlm_loss(const Matrix<T>& hidden, const Batch& batch,
                       const ModelParams<T>& params, const ModelConfig& cfg,
                       Matrix<T>* d_hidden, ModelParams<T>* grads) {
  LossBreakdown out;
  const int nc = cfg.has_pinyin_heads() ? cfg.components() : 0;
  out.pinyin.assign(nc, 0.0);
  if (batch.token_labels.empty()) return out;

  std::vector<int> token_count(batch.sequences(), 0);
  std::vector<std::vector<int>> pinyin_count(nc,
                                             std::vector<int>(batch.sequences()));
  int counted = 0;
  for (int s = 0; s < batch.sequences(); ++s) {
    bool any = false;
    for (int r = batch.offsets[s]; r < batch.offsets[s + 1]; ++r) {
      if (batch.token_labels[r] != kIgnore) ++token_count[s];
      for (int c = 0; c < nc; ++c) {
        if (batch.pinyin_labels[static_cast<size_t>(r) * batch.components +
                                c] != kIgnore) {
          ++pinyin_count[c][s];
        }
      }
    }
    any = token_count[s] > 0;
    for (int c = 0; c < nc; ++c) any = any || pinyin_count[c][s] > 0;
    counted += any ? 1 : 0;
  }
  out.counted_instances = counted;
  if (counted == 0) return out;

  if (d_hidden != nullptr) *d_hidden = Matrix<T>::Zero(hidden.rows(), hidden.cols());
  const auto run_head = [&](int component, const Matrix<T>& w,
                            const Matrix<T>& b, Matrix<T>* dw,
                            Matrix<T>* db) {
    std::vector<int> rows;
    std::vector<int32_t> labels;
    std::vector<double> weights;
    for (int s = 0; s < batch.sequences(); ++s) {
      const int n = component < 0 ? token_count[s] : pinyin_count[component][s];
      for (int r = batch.offsets[s]; r < batch.offsets[s + 1]; ++r) {
        const int32_t label =
            component < 0
                ? batch.token_labels[r]
                : batch.pinyin_labels[static_cast<size_t>(r) *
                                          batch.components +
                                      component];
        if (label == kIgnore) continue;
        rows.push_back(r);
        labels.push_back(label);
        weights.push_back(1.0 / (static_cast<double>(n) * counted));
      }
    }
    if (component < 0) out.token_positions = static_cast<int>(rows.size());
    return affine_cross_entropy(hidden, rows, labels, weights, w, b, d_hidden,
                                dw, db);
  };

  out.token = run_head(-1, params.token_w, params.token_b,
                       grads ? &grads->token_w : nullptr,
                       grads ? &grads->token_b : nullptr);
  out.total = out.token;
  for (int c = 0; c < nc; ++c) {
    out.pinyin[c] = run_head(c, params.pinyin_w[c], params.pinyin_b[c],
                             grads ? &grads->pinyin_w[c] : nullptr,
                             grads ? &grads->pinyin_b[c] : nullptr);
    out.total += out.pinyin[c];
  }
  return out;
}

template <class T>
LossBreakdown mlm_step(const Batch& batch, const ModelParams<T>& params,
                       const ModelConfig& cfg, bool train, Rng* rng,
                       ModelParams<T>* grads) {
  const Matrix<T> embedded = embed(batch, params, cfg);
  const EncoderCache<T> cache =
      encoder_forward(embedded, batch, params, cfg, train, rng);
  if (grads == nullptr) return mlm_loss(cache.output, batch, params, cfg);
  Matrix<T> d_hidden;
  LossBreakdown loss =
      mlm_loss(cache.output, batch, params, cfg, &d_hidden, grads);
  if (loss.counted_instances > 0) {
    encoder_backward(batch, cache, d_hidden, params, cfg, *grads);
  }
  return loss;
}

template <class T>
std::vector<int32_t> predict_tokens(const Batch& batch,
                                    const ModelParams<T>& params,
                                    const ModelConfig& cfg,
                                    std::span<const int> rows) {
  const Matrix<T> embedded = embed(batch, params, cfg);
  const EncoderCache<T> cache =
      encoder_forward(embedded, batch, params, cfg, false, nullptr);
  const Matrix<T> logits =
      affine_logits(cache.output, rows, params.token_w, params.token_b);
  std::vector<int32_t> out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    out.push_back(static_cast<int32_t>(arg));
  }
  return out;
}

#define PYMLM_INSTANTIATE(T)                                                  \
  template struct ModelParams<T>;                                             \
  template Matrix<T> embed(const Batch&, const ModelParams<T>&,               \
                           const ModelConfig&);                               \
  template EncoderCache<T> encoder_forward(const Matrix<T>&, const Batch&,    \
                                           const ModelParams<T>&,             \
                                           const ModelConfig&, bool, Rng*);   \
  template void encoder_backward(const Batch&, const EncoderCache<T>&,        \
                                 const Matrix<T>&, const ModelParams<T>&,     \
                                 const ModelConfig&, ModelParams<T>&);        \
  template double affine_cross_entropy(                                       \
      const Matrix<T>&, std::span<const int>, std::span<const int32_t>,       \
      std::span<const double>, const Matrix<T>&, const Matrix<T>&,            \
      Matrix<T>*, Matrix<T>*, Matrix<T>*);                                    \
  template Matrix<T> affine_logits(const Matrix<T>&, std::span<const int>,    \
                                   const Matrix<T>&, const Matrix<T>&);       \
  template LossBreakdown mlm_loss(const Matrix<T>&, const Batch&,             \
                                  const ModelParams<T>&, const ModelConfig&,  \
                                  Matrix<T>*, ModelParams<T>*);               \
  template LossBreakdown mlm_step(const Batch&, const ModelParams<T>&,        \
                                  const ModelConfig&, bool, Rng*,             \
                                  ModelParams<T>*);                           \
  template std::vector<int32_t> predict_tokens(                               \
      const Batch&, const ModelParams<T>&, const ModelConfig&,                \
      std::span<const int>);

PYMLM_INSTANTIATE(float)
PYMLM_INSTANTIATE(double)
#undef PYMLM_INSTANTIATE

template ModelParams<double> cast_params(const ModelParams<float>&);
template ModelParams<float> cast_params(const ModelParams<double>&);
template ModelParams<float> cast_params(const ModelParams<float>&);
template ModelParams<double> cast_params(const ModelParams<double>&);

}  // namespace pymlm
