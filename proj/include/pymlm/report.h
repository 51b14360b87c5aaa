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

#ifndef PYMLM_REPORT_H_
#define PYMLM_REPORT_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pymlm/checkpoint.h"
#include "pymlm/confusion.h"
#include "pymlm/dataset.h"
#include "pymlm/train.h"

namespace pymlm {

struct ReportVariant {
  std::string name;
  const Checkpoint* checkpoint;
  const TextEncoder* encoder;
};

struct ReportConfig {
  std::vector<double> rates = {0.0, 0.1, 0.2, 0.5};
  std::vector<uint64_t> seeds = {0};
  FinetuneConfig finetune;
  // When false only the test split is noised.
  bool noise_train = true;
  std::string dataset_id;
};

struct ReportRow {
  std::string variant;
  double rate = 0;
  double f1 = 0;                 // mean over seeds
  std::vector<double> seed_f1;  // in ReportConfig::seeds order
};

struct RobustnessReport {
  std::vector<ReportRow> rows;
  nlohmann::json metadata;

  const ReportRow* find(const std::string& variant, double rate) const;
  // Header `variant\trate\tf1`, one row per (variant, rate).
  std::string to_tsv() const;
};

// For every variant, rate and seed: noise both splits (or only the test
// split) with a stream derived from (seed, rate, split), fine-tune from the
// variant's checkpoint and score the noisy test split. The same noisy data
// is seen by every variant.
RobustnessReport robustness_report(const std::vector<ReportVariant>& variants,
                                   const LabeledDataset& train,
                                   const LabeledDataset& test,
                                   const EvalConfusionSet& confusion,
                                   const ReportConfig& cfg);

// `<char>\t<pinyin>\t<v1,...,vH>` rows of the character table, after a
// header line. Characters missing from the vocabulary are skipped and
// reported through `warnings`.
std::string export_embeddings(const Checkpoint& ckpt,
                              const TextEncoder& encoder,
                              std::u32string_view chars,
                              std::vector<std::string>* warnings = nullptr);

struct ProbeResult {
  int positions = 0;
  int correct = 0;
  double accuracy() const {
    return positions == 0 ? 0.0 : static_cast<double>(correct) / positions;
  }
};

// Masks round_half_up(rate * N) positions of each sentence with `branch`
// (TokenMask keeps pinyin visible, TogetherMask hides it) and scores the
// top-1 token prediction. Positions depend only on (seed, sentence index),
// so different branches are compared on identical positions.
ProbeResult recovery_probe(const ModelParams<float>& params,
                           const ModelConfig& cfg, const TextEncoder& encoder,
                           const std::vector<std::string>& sentences,
                           Branch branch, double rate, uint64_t seed);

}  // namespace pymlm

#endif  // PYMLM_REPORT_H_
