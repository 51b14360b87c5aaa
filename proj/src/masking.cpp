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

#include "pymlm/masking.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace pymlm {
namespace {

constexpr double kSumTolerance = 1e-9;

void set_pinyin(TokenSequence& seq, int pos, const int32_t* row) {
  std::copy(row, row + seq.components,
            seq.pinyin_ids.begin() + static_cast<ptrdiff_t>(pos) *
                                         seq.components);
}

void mask_pinyin(TokenSequence& seq, int pos) {
  for (int c = 0; c < seq.components; ++c) {
    seq.pinyin_ids[static_cast<size_t>(pos) * seq.components + c] =
        PinyinVocab::kMask;
  }
}

void label_pinyin(MaskedInstance& inst, const TokenSequence& orig, int pos) {
  for (int c = 0; c < orig.components; ++c) {
    inst.pinyin_labels[static_cast<size_t>(pos) * orig.components + c] =
        orig.pinyin(pos, c);
  }
}

}  // namespace

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::ConfusionOnly:
      return "confusion_only";
    case Scheme::Parallel:
      return "parallel";
    case Scheme::ParallelOut:
      return "parallel_out";
  }
  return "parallel_out";
}

Scheme parse_scheme(std::string_view name) {
  for (Scheme s :
       {Scheme::ConfusionOnly, Scheme::Parallel, Scheme::ParallelOut}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown scheme: '" + std::string(name) + "'");
}

std::string to_string(ReplaceSource s) {
  return s == ReplaceSource::ConfusionSet ? "confusion_set" : "random_vocab";
}

ReplaceSource parse_replace_source(std::string_view name) {
  if (name == "confusion_set") return ReplaceSource::ConfusionSet;
  if (name == "random_vocab") return ReplaceSource::RandomVocab;
  throw InvalidArgument("unknown replace source: '" + std::string(name) + "'");
}

std::string_view to_string(Branch b) {
  switch (b) {
    case Branch::NotCandidate:
      return "not_candidate";
    case Branch::TogetherMask:
      return "together_mask";
    case Branch::TokenMask:
      return "token_mask";
    case Branch::PinyinMask:
      return "pinyin_mask";
    case Branch::ConfusionReplace:
      return "confusion_replace";
    case Branch::RandomReplace:
      return "random_replace";
    case Branch::Unchanged:
      return "unchanged";
  }
  return "not_candidate";
}

std::vector<std::string> MaskingConfig::validate() const {
  std::vector<std::string> errors;
  const auto in_unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      errors.push_back(std::string(name) + " must lie in [0, 1]");
    }
  };
  in_unit(select_rate, "select_rate");
  in_unit(mask_prob, "mask_prob");
  in_unit(confusion_frac, "confusion_frac");
  in_unit(unchanged_frac, "unchanged_frac");
  if (std::abs(mask_prob + confusion_frac + unchanged_frac - 1.0) >
      kSumTolerance) {
    errors.push_back("mask_prob + confusion_frac + unchanged_frac must be 1");
  }
  double sum = 0;
  for (double t : task_proportions) {
    in_unit(t, "task proportion");
    sum += t;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    errors.push_back("task proportions must sum to 1");
  }
  return errors;
}

nlohmann::json MaskingConfig::to_json() const {
  return {{"select_rate", select_rate},
          {"mask_prob", mask_prob},
          {"confusion_frac", confusion_frac},
          {"unchanged_frac", unchanged_frac},
          {"task_proportions", task_proportions},
          {"sampling", pymlm::to_string(strategy)},
          {"scheme", pymlm::to_string(scheme)},
          {"replace_source", pymlm::to_string(replace_source)}};
}

bool is_maskable(int32_t char_id) {
  return char_id != CharVocab::kPad && char_id != CharVocab::kCls &&
         char_id != CharVocab::kSep;
}

std::vector<int> select_candidates(const TokenSequence& seq, double rate,
                                   Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw InvalidArgument("selection rate must lie in [0, 1]");
  }
  std::vector<int> eligible;
  for (int i = 0; i < seq.length(); ++i) {
    if (is_maskable(seq.char_ids[i])) eligible.push_back(i);
  }
  const auto k = static_cast<size_t>(std::min<int64_t>(
      round_half_up(rate * static_cast<double>(eligible.size())),
      static_cast<int64_t>(eligible.size())));
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + rng.below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(k);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

MaskedInstance unmasked(const TokenSequence& seq) {
  MaskedInstance inst;
  inst.input = seq;
  inst.token_labels.assign(seq.length(), kIgnore);
  inst.pinyin_labels.assign(seq.pinyin_ids.size(), kIgnore);
  inst.branches.assign(seq.length(), Branch::NotCandidate);
  return inst;
}

MaskedInstance apply_masking(const TokenSequence& seq,
                             const MaskingConfig& cfg,
                             const TextEncoder& encoder,
                             const PretrainConfusionSet& confusion, Rng& rng) {
  if (const auto errors = cfg.validate(); !errors.empty()) {
    throw InvalidArgument("invalid masking config: " + errors.front());
  }
  const bool char_only = cfg.scheme == Scheme::ConfusionOnly;
  if (char_only != (seq.components == 0) ||
      encoder.components() != seq.components) {
    throw InvalidArgument("sequence pinyin mode incompatible with scheme " +
                          to_string(cfg.scheme));
  }
  const CharVocab& vocab = encoder.vocab();
  MaskedInstance inst = unmasked(seq);
  TokenSequence& out = inst.input;

  const double together = cfg.mask_prob * cfg.task_proportions[0];
  const double token_only =
      cfg.mask_prob * (cfg.task_proportions[0] + cfg.task_proportions[1]);

  for (int pos : select_candidates(seq, cfg.select_rate, rng)) {
    const int32_t orig = seq.char_ids[pos];
    const double u = rng.uniform();
    Branch branch;
    if (u < cfg.mask_prob) {
      if (char_only || u < together) {
        branch = char_only ? Branch::TokenMask : Branch::TogetherMask;
      } else if (u < token_only) {
        branch = Branch::TokenMask;
      } else {
        branch = Branch::PinyinMask;
      }
    } else if (u < cfg.mask_prob + cfg.confusion_frac) {
      branch = cfg.replace_source == ReplaceSource::ConfusionSet
                   ? Branch::ConfusionReplace
                   : Branch::RandomReplace;
    } else {
      branch = Branch::Unchanged;
    }

    switch (branch) {
      case Branch::TogetherMask:
        out.char_ids[pos] = CharVocab::kMask;
        mask_pinyin(out, pos);
        label_pinyin(inst, seq, pos);
        break;
      case Branch::TokenMask:
        out.char_ids[pos] = CharVocab::kMask;
        break;
      case Branch::PinyinMask:
        mask_pinyin(out, pos);
        label_pinyin(inst, seq, pos);
        break;
      case Branch::ConfusionReplace: {
        const bool known = orig >= CharVocab::kNumSpecials;
        const char32_t ch = known ? vocab.character(orig) : U'\0';
        if (!known || confusion.class_of(ch) == nullptr) {
          branch = Branch::Unchanged;
          ++inst.downgraded;
          break;
        }
        const int32_t repl =
            vocab.id(sample_confusable(confusion, ch, cfg.strategy, rng));
        out.char_ids[pos] = repl;
        set_pinyin(out, pos, encoder.pinyin_row(repl));
        break;
      }
      case Branch::RandomReplace: {
        const int32_t n = vocab.size() - CharVocab::kNumSpecials;
        if (n <= 0) {
          branch = Branch::Unchanged;
          break;
        }
        const bool exclude = n > 1 && orig >= CharVocab::kNumSpecials;
        int32_t repl = CharVocab::kNumSpecials +
                       static_cast<int32_t>(rng.below(exclude ? n - 1 : n));
        if (exclude && repl >= orig) ++repl;
        out.char_ids[pos] = repl;
        set_pinyin(out, pos, encoder.pinyin_row(repl));
        break;
      }
      case Branch::Unchanged:
      case Branch::NotCandidate:
        break;
    }
    inst.branches[pos] = branch;
    if (branch != Branch::PinyinMask) inst.token_labels[pos] = orig;
  }
  return inst;
}

std::vector<MaskedInstance> remask_epoch(std::span<const TokenSequence> batch,
                                         const MaskingConfig& cfg,
                                         const TextEncoder& encoder,
                                         const PretrainConfusionSet& confusion,
                                         uint64_t seed, uint64_t epoch) {
  std::vector<MaskedInstance> out;
  out.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(seed, {epoch, i}));
    out.push_back(apply_masking(batch[i], cfg, encoder, confusion, rng));
  }
  return out;
}

MaskedInstance mask_positions(const TokenSequence& seq,
                              std::span<const int> positions, Branch branch) {
  if (branch != Branch::TogetherMask && branch != Branch::TokenMask &&
      branch != Branch::PinyinMask) {
    throw InvalidArgument("mask_positions supports mask branches only");
  }
  MaskedInstance inst = unmasked(seq);
  for (int pos : positions) {
    if (pos < 0 || pos >= seq.length() || !is_maskable(seq.char_ids[pos])) {
      throw InvalidArgument("position " + std::to_string(pos) +
                            " cannot be masked");
    }
    if (branch != Branch::PinyinMask) {
      inst.input.char_ids[pos] = CharVocab::kMask;
      inst.token_labels[pos] = seq.char_ids[pos];
    }
    if (branch != Branch::TokenMask) {
      mask_pinyin(inst.input, pos);
      label_pinyin(inst, seq, pos);
    }
    inst.branches[pos] = branch;
  }
  return inst;
}

std::string corruption_log_jsonl(std::span<const MaskedInstance> batch) {
  std::string out;
  for (size_t i = 0; i < batch.size(); ++i) {
    nlohmann::json positions = nlohmann::json::array();
    nlohmann::json branches = nlohmann::json::array();
    for (int p = 0; p < batch[i].length(); ++p) {
      if (batch[i].branches[p] == Branch::NotCandidate) continue;
      positions.push_back(p);
      branches.push_back(std::string(to_string(batch[i].branches[p])));
    }
    nlohmann::json rec = {{"instance", i},
                          {"positions", positions},
                          {"branches", branches},
                          {"downgraded", batch[i].downgraded}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

}  // namespace pymlm
