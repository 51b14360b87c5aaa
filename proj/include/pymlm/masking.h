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

#ifndef PYMLM_MASKING_H_
#define PYMLM_MASKING_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pymlm/common.h"
#include "pymlm/confusion.h"
#include "pymlm/vocab.h"

namespace pymlm {

// How pinyin takes part in pretraining.
//   ConfusionOnly: character stream only; corruption uses replacement.
//   Parallel:      characters and pinyin summed at the input.
//   ParallelOut:   Parallel plus a pinyin-recovery output head.
enum class Scheme { ConfusionOnly, Parallel, ParallelOut };

std::string to_string(Scheme s);
Scheme parse_scheme(std::string_view name);

// Source of replacement characters in the replace branch.
enum class ReplaceSource { ConfusionSet, RandomVocab };

std::string to_string(ReplaceSource s);
ReplaceSource parse_replace_source(std::string_view name);

enum class Branch : uint8_t {
  NotCandidate,
  TogetherMask,
  TokenMask,
  PinyinMask,
  ConfusionReplace,
  RandomReplace,
  Unchanged,
};

std::string_view to_string(Branch b);

struct MaskingConfig {
  double select_rate = 0.45;
  double mask_prob = 0.8;
  double confusion_frac = 0.1;
  double unchanged_frac = 0.1;
  // (together, token only, pinyin only) shares of the mask branch.
  std::array<double, 3> task_proportions = {0.8, 0.1, 0.1};
  SamplingStrategy strategy = SamplingStrategy::Frequency;
  Scheme scheme = Scheme::ParallelOut;
  ReplaceSource replace_source = ReplaceSource::ConfusionSet;

  // Every violated invariant, empty when valid.
  std::vector<std::string> validate() const;
  nlohmann::json to_json() const;
};

struct MaskedInstance {
  TokenSequence input;                // corrupted ids
  std::vector<int32_t> token_labels;  // kIgnore where unsupervised
  std::vector<int32_t> pinyin_labels;  // length x components
  std::vector<Branch> branches;
  int downgraded = 0;  // replace draws that found no confusion class

  int length() const { return input.length(); }
  bool operator==(const MaskedInstance&) const = default;
};

// [CLS], [SEP] and [PAD] are never candidates.
bool is_maskable(int32_t char_id);

// Uniformly chooses round_half_up(rate * N) of the N maskable positions
// without replacement. Returned positions are ascending.
std::vector<int> select_candidates(const TokenSequence& seq, double rate,
                                   Rng& rng);

// Corrupts one sequence. `encoder` supplies pinyin ids of replacement
// characters; its mode must match the scheme (none for ConfusionOnly).
MaskedInstance apply_masking(const TokenSequence& seq,
                             const MaskingConfig& cfg,
                             const TextEncoder& encoder,
                             const PretrainConfusionSet& confusion, Rng& rng);

// Re-masks a batch with one independent stream per instance derived from
// (seed, epoch, index).
std::vector<MaskedInstance> remask_epoch(std::span<const TokenSequence> batch,
                                         const MaskingConfig& cfg,
                                         const TextEncoder& encoder,
                                         const PretrainConfusionSet& confusion,
                                         uint64_t seed, uint64_t epoch);

// An uncorrupted instance with no labels.
MaskedInstance unmasked(const TokenSequence& seq);

// Applies `branch` (TogetherMask, TokenMask or PinyinMask) at the given
// positions with labels, leaving everything else untouched.
MaskedInstance mask_positions(const TokenSequence& seq,
                              std::span<const int> positions, Branch branch);

// One JSON object per instance: candidate positions and branch names.
std::string corruption_log_jsonl(std::span<const MaskedInstance> batch);

}  // namespace pymlm

#endif  // PYMLM_MASKING_H_
