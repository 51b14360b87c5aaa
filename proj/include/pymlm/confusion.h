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

#ifndef PYMLM_CONFUSION_H_
#define PYMLM_CONFUSION_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pymlm/common.h"
#include "pymlm/pinyin.h"
#include "pymlm/vocab.h"

namespace pymlm {

class NoClassError : public Error {
 public:
  using Error::Error;
};

// Where a confusion set came from. The tag is part of the type so the
// pretraining set can never be handed to the evaluation noise injector.
enum class Provenance { Pretrain, Eval };

std::string to_string(Provenance p);

enum class SamplingStrategy { Frequency, Uniform };

std::string to_string(SamplingStrategy s);
SamplingStrategy parse_sampling_strategy(std::string_view name);

struct ConfusionCandidate {
  char32_t ch;
  double weight;
  bool operator==(const ConfusionCandidate&) const = default;
};

// One observed clean -> noisy substitution with its count.
struct ConfusionPair {
  char32_t noisy;
  uint64_t count;
  bool operator==(const ConfusionPair&) const = default;
};

// Class key for characters absent from the dictionary.
inline constexpr std::string_view kUnknownClass = "[UNK]";

template <Provenance P>
class ConfusionSet {
 public:
  static constexpr Provenance kProvenance = P;
  using Classes = std::map<std::string, std::vector<ConfusionCandidate>>;
  using Pairs = std::map<char32_t, std::vector<ConfusionPair>>;

  ConfusionSet() = default;
  // Validates class invariants (positive weights summing to one, each
  // character in exactly one class).
  explicit ConfusionSet(Classes classes, Pairs pairs = {},
                        uint64_t skipped_pairs = 0);

  const Classes& classes() const { return classes_; }
  // Pronunciation key of the class holding ch, or nullptr.
  const std::string* class_of(char32_t ch) const;
  const std::vector<ConfusionCandidate>* members(char32_t ch) const;

  // Observed substitutions keyed by the clean character (eval sets only).
  const Pairs& pairs() const { return pairs_; }
  const std::vector<ConfusionPair>* pairs_for(char32_t clean) const;
  uint64_t skipped_pairs() const { return skipped_; }

  bool operator==(const ConfusionSet& o) const {
    return classes_ == o.classes_ && pairs_ == o.pairs_ &&
           skipped_ == o.skipped_;
  }

  nlohmann::json to_json() const;
  // Throws ParseError if the stored provenance differs from P.
  static ConfusionSet from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ConfusionSet load(const std::string& path);

 private:
  Classes classes_;
  std::map<char32_t, std::string> class_index_;
  Pairs pairs_;
  uint64_t skipped_ = 0;
};

using PretrainConfusionSet = ConfusionSet<Provenance::Pretrain>;
using EvalConfusionSet = ConfusionSet<Provenance::Eval>;

// Groups in-vocabulary dictionary characters by toneless pinyin and weights
// each by its corpus count normalised within the class. Classes whose total
// count is zero get uniform weights.
PretrainConfusionSet build_confusion_set(const CharVocab& vocab,
                                         const PinyinDict& dict);

// Draws a replacement for ch from its class. The query character is
// excluded (and the remaining weights renormalised) unless it is alone in
// its class. Throws NoClassError when ch belongs to no class.
template <Provenance P>
char32_t sample_confusable(const ConfusionSet<P>& set, char32_t ch,
                           SamplingStrategy strategy, Rng& rng);

// Builds the evaluation set from aligned `<clean>\t<noisy>` sentence pairs.
// Each differing position records one clean -> noisy confusion. Pairs of
// unequal length (or without a tab) are skipped and counted. Counts from
// `base` are merged in first.
EvalConfusionSet build_eval_confusion_set(
    const std::vector<std::string>& pair_lines, const PinyinDict& dict,
    const EvalConfusionSet* base = nullptr);
EvalConfusionSet build_eval_confusion_set(
    const std::string& pairs_path, const PinyinDict& dict,
    const EvalConfusionSet* base = nullptr);

extern template class ConfusionSet<Provenance::Pretrain>;
extern template class ConfusionSet<Provenance::Eval>;

}  // namespace pymlm

#endif  // PYMLM_CONFUSION_H_
