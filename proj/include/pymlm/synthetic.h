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

#ifndef PYMLM_SYNTHETIC_H_
#define PYMLM_SYNTHETIC_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pymlm/dataset.h"
#include "pymlm/pinyin.h"

namespace pymlm {

// A toy language of two-character words over homophone classes drawn from
// the dictionary. Every word has a distinct pair of pronunciations, so the
// pinyin of a word identifies it even when its characters are swapped for
// homophones, while each character is shared by several words. A sentence
// is one topic keyword among Zipf-distributed filler words; the topic is
// the classification label and the keyword is the tagged entity.
struct SyntheticConfig {
  uint64_t seed = 2026;
  int large_classes = 20;  // four characters each
  int small_classes = 40;  // three characters each
  int words = 160;
  int topics = 4;
  int keywords_per_topic = 10;
  int filler_min = 4;
  int filler_max = 6;
  double zipf_exponent = 1.0;
  int corpus_sentences = 5000;
  int classify_train = 2000;
  int classify_test = 400;
  int tag_train = 800;
  int tag_test = 400;
  int probe_sentences = 1000;
  int pair_sentences = 2000;
  double pair_noise = 0.15;

  std::vector<std::string> validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static SyntheticConfig from_json(const nlohmann::json& j);
};

struct SyntheticData {
  std::vector<std::string> corpus;
  LabeledDataset classify_train, classify_test;
  LabeledDataset tag_train, tag_test;
  std::vector<std::string> probe;
  std::vector<std::string> eval_pairs;  // `<clean>\t<noisy>`
  nlohmann::json lexicon;
};

SyntheticData generate_synthetic(const PinyinDict& dict,
                                 const SyntheticConfig& cfg);

// Writes corpus.txt, probe.txt, eval_pairs.tsv, lexicon.json and the four
// *_train / *_test JSONL datasets into `dir` (created if needed).
void write_synthetic(const SyntheticData& data, const std::string& dir);

}  // namespace pymlm

#endif  // PYMLM_SYNTHETIC_H_
