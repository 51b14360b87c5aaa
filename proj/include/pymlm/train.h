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

#ifndef PYMLM_TRAIN_H_
#define PYMLM_TRAIN_H_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "pymlm/checkpoint.h"
#include "pymlm/confusion.h"
#include "pymlm/dataset.h"
#include "pymlm/masking.h"
#include "pymlm/model.h"
#include "pymlm/vocab.h"

namespace pymlm {

struct TrainConfig {
  int64_t steps = 5000;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  uint64_t seed = 0;

  std::vector<std::string> validate() const;
  nlohmann::json to_json() const;
};

struct LossPoint {
  int64_t step;
  double loss;
  bool operator==(const LossPoint&) const = default;
};

struct TrainRun {
  ModelConfig model;
  MaskingConfig masking;
  TrainConfig train;
  std::vector<LossPoint> loss_curve;
  double wall_seconds = 0;
  Checkpoint checkpoint;

  // `step\tloss` lines with a header.
  std::string loss_curve_tsv() const;
  nlohmann::json summary() const;
};

// Fills in the vocabulary sizes and pinyin mode an encoder implies.
ModelConfig complete_config(ModelConfig cfg, const TextEncoder& encoder);

// Masked-LM pretraining. Every epoch re-masks the whole corpus with fresh
// streams and visits it in a seeded order. The checkpoint embeds the
// vocabularies so downstream commands only need the dictionary.
// Throws NumericError naming the step if the loss stops being finite.
TrainRun pretrain(const std::vector<std::string>& corpus,
                  const TextEncoder& encoder,
                  const PretrainConfusionSet& confusion, ModelConfig mcfg,
                  const MaskingConfig& kcfg, const TrainConfig& tcfg);

// Owns the vocabularies behind a TextEncoder rebuilt from checkpoint
// metadata.
class EncoderBundle {
 public:
  EncoderBundle(CharVocab vocab, PinyinDict dict, PinyinMode mode,
                PinyinVocab pinyin_vocab);
  static EncoderBundle from_checkpoint(const Checkpoint& ckpt,
                                       PinyinDict dict);

  const TextEncoder& encoder() const { return *encoder_; }
  const CharVocab& vocab() const { return *vocab_; }
  const PinyinDict& dict() const { return *dict_; }

 private:
  std::shared_ptr<CharVocab> vocab_;
  std::shared_ptr<PinyinDict> dict_;
  std::shared_ptr<TextEncoder> encoder_;
};

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  uint64_t seed = 0;

  std::vector<std::string> validate() const;
  nlohmann::json to_json() const;
};

// A pretrained encoder with a task head on top.
struct TaskModel {
  ModelConfig config;
  Task task = Task::Classify;
  std::vector<std::string> labels;
  ModelParams<float> params;
  Matrix<float> head_w;
  Matrix<float> head_b;
  nlohmann::json meta = nlohmann::json::object();  // from the pretrained run

  Checkpoint to_checkpoint(const nlohmann::json& extra = {});
  static TaskModel from_checkpoint(const Checkpoint& ckpt);
};

// Full fine-tune. Classify reads the [CLS] row; Tag labels every character
// row ([CLS] and [SEP] excluded). Throws DataError for labels outside the
// dataset inventory and InvalidArgument when the checkpoint does not match
// the encoder.
TaskModel finetune(const Checkpoint& pretrained, const LabeledDataset& ds,
                   const TextEncoder& encoder, const FinetuneConfig& fcfg);

// Predicted label index per example (Classify) or per character (Tag,
// flattened example by example).
std::vector<std::vector<int>> predict(const TaskModel& model,
                                      const LabeledDataset& ds,
                                      const TextEncoder& encoder);

// Macro-F1 (Classify) or entity F1 (Tag). Throws UndefinedMetricError on an
// empty dataset.
double evaluate_f1(const TaskModel& model, const LabeledDataset& ds,
                   const TextEncoder& encoder);

}  // namespace pymlm

#endif  // PYMLM_TRAIN_H_
