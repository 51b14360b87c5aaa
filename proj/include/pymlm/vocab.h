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

#ifndef PYMLM_VOCAB_H_
#define PYMLM_VOCAB_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pymlm/pinyin.h"

namespace pymlm {

// Character-level vocabulary with corpus counts.
class CharVocab {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kCls = 2;
  static constexpr int32_t kSep = 3;
  static constexpr int32_t kMask = 4;
  static constexpr int32_t kNumSpecials = 5;
  static constexpr std::array<std::string_view, kNumSpecials> kSpecials = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

  CharVocab();

  int32_t size() const { return static_cast<int32_t>(chars_.size()); }
  static bool is_special(int32_t id) { return id >= 0 && id < kNumSpecials; }

  // Id for a character; kUnk if out of vocabulary.
  int32_t id(char32_t ch) const;
  bool contains(char32_t ch) const { return index_.count(ch) != 0; }
  // Character for a non-special id.
  char32_t character(int32_t id) const { return chars_[id]; }
  // Printable token (special name or UTF-8 character).
  std::string token(int32_t id) const;
  uint64_t freq(int32_t id) const { return freq_[id]; }

  // Lines `<token>\t<count>` in id order, specials first.
  std::string serialize() const;
  static CharVocab parse(std::string_view contents);
  void save(const std::string& path) const;
  static CharVocab load(const std::string& path);

  bool operator==(const CharVocab& o) const {
    return chars_ == o.chars_ && freq_ == o.freq_;
  }

 private:
  friend CharVocab build_char_vocab(const std::vector<std::string>&, uint64_t);
  void append(char32_t ch, uint64_t count);

  std::vector<char32_t> chars_;  // 0 for specials
  std::vector<uint64_t> freq_;
  std::unordered_map<char32_t, int32_t> index_;
};

// Counts every character of every line (line breaks excluded). Ids beyond
// the specials are ordered by descending count, ties by codepoint.
CharVocab build_char_vocab(const std::vector<std::string>& corpus,
                           uint64_t min_freq);

// Parallel character/pinyin ids for one sentence.
struct TokenSequence {
  std::vector<int32_t> char_ids;
  std::vector<int32_t> pinyin_ids;  // length() x components, row-major
  std::vector<int32_t> segment_ids;
  int components = 0;

  int length() const { return static_cast<int>(char_ids.size()); }
  int32_t pinyin(int pos, int c) const {
    return pinyin_ids[static_cast<size_t>(pos) * components + c];
  }
  bool operator==(const TokenSequence&) const = default;
};

// Encodes text for one pinyin mode. Holds a per-character-id table of
// pinyin component ids so encoding and masking never consult the
// dictionary in the hot path.
class TextEncoder {
 public:
  // pinyin_vocab must have mode `mode`; ignored for PinyinMode::None.
  TextEncoder(const CharVocab& vocab, const PinyinDict& dict, PinyinMode mode,
              PinyinVocab pinyin_vocab = {});

  PinyinMode mode() const { return mode_; }
  int components() const { return components_; }
  const CharVocab& vocab() const { return *vocab_; }
  const PinyinDict& dict() const { return *dict_; }
  const PinyinVocab& pinyin_vocab() const { return pinyin_vocab_; }

  // Pinyin ids of a character id ([P-PAD] for specials, [P-UNK] for UNK).
  const int32_t* pinyin_row(int32_t char_id) const {
    return &rows_[static_cast<size_t>(char_id) * components_];
  }

  // [CLS] chars... [SEP], truncated to max_len (>= 3) keeping both ends.
  TokenSequence encode(std::u32string_view text, int max_len) const;
  TokenSequence encode(std::string_view utf8_text, int max_len) const;

 private:
  const CharVocab* vocab_;
  const PinyinDict* dict_;
  PinyinMode mode_;
  PinyinVocab pinyin_vocab_;
  int components_;
  std::vector<int32_t> rows_;
};

// One-shot convenience wrapper over TextEncoder.
TokenSequence encode(std::string_view text, const CharVocab& vocab,
                     const PinyinDict& dict, PinyinMode mode,
                     const PinyinVocab& pinyin_vocab, int max_len);

// Right-pads with [PAD] / [P-PAD] up to `length`.
TokenSequence pad_to(const TokenSequence& seq, int length);

}  // namespace pymlm

#endif  // PYMLM_VOCAB_H_
