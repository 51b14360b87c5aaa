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

#ifndef PYMLM_DATASET_H_
#define PYMLM_DATASET_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pymlm/common.h"
#include "pymlm/confusion.h"

namespace pymlm {

class DataError : public Error {
 public:
  using Error::Error;
};

enum class Task { Classify, Tag };

std::string to_string(Task t);
Task parse_task(std::string_view name);

struct LabeledExample {
  std::string text;
  std::string label;              // Classify
  std::vector<std::string> tags;  // Tag, one per character

  bool operator==(const LabeledExample&) const = default;
};

// A downstream dataset. The label inventory is sorted; for Tag it always
// contains "O".
struct LabeledDataset {
  Task task = Task::Classify;
  std::vector<LabeledExample> examples;
  std::vector<std::string> labels;

  size_t size() const { return examples.size(); }
  int label_index(const std::string& label) const;  // -1 if absent
  // Throws DataError on tag/length mismatch or labels outside the inventory.
  void validate() const;

  bool operator==(const LabeledDataset&) const = default;
};

// JSON lines: {"text": ..., "label": ...} or {"text": ..., "tags": [...]}.
// The task is inferred from the first record; the inventory is collected
// from the data unless `labels` is supplied.
LabeledDataset parse_dataset(std::string_view jsonl,
                             const std::vector<std::string>& labels = {});
LabeledDataset load_dataset(const std::string& path,
                            const std::vector<std::string>& labels = {});
std::string serialize_dataset(const LabeledDataset& ds);
void save_dataset(const std::string& path, const LabeledDataset& ds);

struct NoiseStats {
  double rate = 0;
  uint64_t examples = 0;
  uint64_t substitutions = 0;
  uint64_t replaceable = 0;
  // Examples that needed substitutions but had no replaceable character.
  uint64_t unreplaceable_examples = 0;

  nlohmann::json to_json() const;
};

struct NoisyDataset {
  LabeledDataset data;
  NoiseStats stats;
};

// Replaces exactly round_half_up(rate * k) of the k replaceable characters
// of each example, where a character is replaceable when the evaluation set
// has recorded substitutions for it. Positions are chosen uniformly and the
// substitute is drawn in proportion to the recorded pair counts. Labels,
// tags and lengths are preserved.
NoisyDataset inject_noise(const LabeledDataset& ds, double rate,
                          const EvalConfusionSet& confusion, Rng& rng);

}  // namespace pymlm

#endif  // PYMLM_DATASET_H_
