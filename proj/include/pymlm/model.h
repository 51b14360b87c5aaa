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

#ifndef PYMLM_MODEL_H_
#define PYMLM_MODEL_H_

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pymlm/common.h"
#include "pymlm/masking.h"
#include "pymlm/pinyin.h"

namespace pymlm {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 64;
  int ffn = 256;
  int max_len = 128;
  int32_t char_vocab_size = 0;
  PinyinMode pinyin_mode = PinyinMode::None;
  std::vector<int32_t> pinyin_table_sizes;
  double dropout = 0.1;
  Scheme scheme = Scheme::ParallelOut;

  int components() const {
    return static_cast<int>(pinyin_table_sizes.size());
  }
  bool has_pinyin_heads() const {
    return scheme == Scheme::ParallelOut && components() > 0;
  }
  std::vector<std::string> validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct LayerParams {
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<T> ln1_g, ln1_b;
  Matrix<T> w1, b1, w2, b2;
  Matrix<T> ln2_g, ln2_b;
};

// A named view of one parameter tensor. `decay` marks weight matrices that
// receive decoupled weight decay (biases and layer norms do not).
template <class T>
struct ParamRef {
  std::string name;
  Matrix<T>* value;
  bool decay;
};

// Weights use the convention y = x * W + b with W shaped (in, out).
template <class T>
struct ModelParams {
  Matrix<T> char_embed;
  std::vector<Matrix<T>> pinyin_embeds;
  Matrix<T> pos_embed;
  Matrix<T> seg_embed;
  std::vector<LayerParams<T>> layers;
  Matrix<T> token_w, token_b;
  std::vector<Matrix<T>> pinyin_w, pinyin_b;

  // Correctly shaped, all zeros.
  static ModelParams zeros(const ModelConfig& cfg);
  // Truncated normal (stddev 0.02) tables and projections; layer norm
  // scales one, all biases zero.
  static ModelParams initialize(const ModelConfig& cfg, Rng& rng);

  // Stable order; names are also the checkpoint tensor names.
  std::vector<ParamRef<T>> refs();
  size_t parameter_count();
  bool all_finite();
  void set_zero();
};

// Sequences packed row-wise: row r belongs to sequence s when
// offsets[s] <= r < offsets[s + 1].
struct Batch {
  std::vector<int32_t> char_ids;
  std::vector<int32_t> pinyin_ids;  // rows x components
  std::vector<int32_t> segment_ids;
  std::vector<int32_t> positions;
  std::vector<int> offsets = {0};
  int components = 0;
  // Present when packed from masked instances.
  std::vector<int32_t> token_labels;
  std::vector<int32_t> pinyin_labels;

  int rows() const { return static_cast<int>(char_ids.size()); }
  int sequences() const { return static_cast<int>(offsets.size()) - 1; }

  static Batch pack(std::span<const TokenSequence> seqs);
  static Batch pack(std::span<const MaskedInstance> instances);
};

template <class T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // per (sequence, head), row-stochastic
  Matrix<T> context;
  Matrix<T> drop1;  // scaled keep mask, empty when dropout is off
  Matrix<T> xhat1;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1;
  Matrix<T> norm1;
  Matrix<T> pre_act;
  Matrix<T> act;
  Matrix<T> drop2;
  Matrix<T> xhat2;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd2;
};

template <class T>
struct EncoderCache {
  Matrix<T> embedded;
  std::vector<LayerCache<T>> layers;
  Matrix<T> output;
};

// Sum of character, pinyin (one table per component), position and segment
// embeddings. Throws InvalidArgument for out-of-range ids.
template <class T>
Matrix<T> embed(const Batch& batch, const ModelParams<T>& params,
                const ModelConfig& cfg);

// Runs the encoder blocks on embedded input. Dropout is active only when
// `train` is set, drawing from `rng` (which may then not be null). Keys
// holding [PAD] are masked out of attention. Throws NumericError naming the
// layer on non-finite activations.
template <class T>
EncoderCache<T> encoder_forward(const Matrix<T>& embedded, const Batch& batch,
                                const ModelParams<T>& params,
                                const ModelConfig& cfg, bool train, Rng* rng);

// Back-propagates d_output through the encoder and the embedding sum,
// accumulating into grads.
template <class T>
void encoder_backward(const Batch& batch, const EncoderCache<T>& cache,
                      const Matrix<T>& d_output, const ModelParams<T>& params,
                      const ModelConfig& cfg, ModelParams<T>& grads);

// Softmax cross-entropy of the affine head (w, b) applied to the selected
// rows of `hidden`. Returns sum_i weights[i] * CE_i; when d_hidden is not
// null the gradients are accumulated into d_hidden, dw and db.
template <class T>
double affine_cross_entropy(const Matrix<T>& hidden, std::span<const int> rows,
                            std::span<const int32_t> labels,
                            std::span<const double> weights,
                            const Matrix<T>& w, const Matrix<T>& b,
                            Matrix<T>* d_hidden, Matrix<T>* dw, Matrix<T>* db);

// Logits of an affine head for the selected rows.
template <class T>
Matrix<T> affine_logits(const Matrix<T>& hidden, std::span<const int> rows,
                        const Matrix<T>& w, const Matrix<T>& b);

struct LossBreakdown {
  double total = 0;
  double token = 0;
  std::vector<double> pinyin;  // per component, ParallelOut only
  int counted_instances = 0;
  int token_positions = 0;
};

// Mean over instances with at least one supervised position of: the mean
// token cross-entropy, plus (ParallelOut) the mean cross-entropy of each
// pinyin head over its labelled positions.
template <class T>
LossBreakdown mlm_loss(const Matrix<T>& hidden, const Batch& batch,
                       const ModelParams<T>& params, const ModelConfig& cfg,
                       Matrix<T>* d_hidden = nullptr,
                       ModelParams<T>* grads = nullptr);

// Full forward pass (and backward when grads is not null, accumulating).
template <class T>
LossBreakdown mlm_step(const Batch& batch, const ModelParams<T>& params,
                       const ModelConfig& cfg, bool train, Rng* rng,
                       ModelParams<T>* grads);

// Top-1 token-head prediction for each row in `rows`.
template <class T>
std::vector<int32_t> predict_tokens(const Batch& batch,
                                    const ModelParams<T>& params,
                                    const ModelConfig& cfg,
                                    std::span<const int> rows);

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p);

}  // namespace pymlm

#endif  // PYMLM_MODEL_H_
