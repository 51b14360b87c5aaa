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

#ifndef PYMLM_PINYIN_H_
#define PYMLM_PINYIN_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace pymlm {

// Sentinel initial for zero-initial syllables such as "an" or "er".
inline constexpr std::string_view kZeroInitial = "∅";

// The 23 standard Mandarin initials.
inline constexpr std::array<std::string_view, 23> kInitials = {
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j",
    "q", "x", "zh", "ch", "sh", "r", "z", "c", "s", "y", "w"};

struct Syllable {
  std::string text;     // toneless, e.g. "zhong"
  std::string initial;  // one of kInitials or kZeroInitial
  std::string final;    // non-empty remainder
  int tone = 0;         // 0 = neutral, 1..4

  bool operator==(const Syllable&) const = default;
};

// Splits toneless pinyin into (initial, final) by longest initial prefix.
// Throws DecompositionError if the input is empty, not lowercase ASCII, or
// consists of an initial alone.
std::pair<std::string, std::string> decompose(std::string_view pinyin);

// Parses "zhong1" style pinyin (tone digit 1-5, 5 meaning neutral).
Syllable parse_syllable(std::string_view toned);

// Character -> pronunciation map. One syllable per character; ordered by
// codepoint so every derived structure is deterministic.
class PinyinDict {
 public:
  PinyinDict() = default;

  // Throws DuplicateEntryError if ch is already present.
  void add(char32_t ch, Syllable syllable);

  const Syllable* find(char32_t ch) const;
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<char32_t, Syllable>& entries() const { return entries_; }

 private:
  std::map<char32_t, Syllable> entries_;
};

// Reads `<char>\t<pinyin><tone>` lines; '#' lines and blank lines skipped.
PinyinDict load_dictionary(const std::string& path);
PinyinDict parse_dictionary(std::string_view contents);

// Absent for characters outside the dictionary.
std::optional<Syllable> to_syllable(char32_t ch, const PinyinDict& dict);

enum class PinyinMode { None, Plain, PlainTone, InitFinal, InitFinalTone };

std::string to_string(PinyinMode mode);
PinyinMode parse_pinyin_mode(std::string_view name);

// Number of id components per position: 0, 1, 1, 2 or 3.
int component_count(PinyinMode mode);

// Per-component id tables. Ids 0..2 are the reserved tokens in every table.
class PinyinVocab {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kMask = 1;
  static constexpr int32_t kUnk = 2;
  static constexpr std::array<std::string_view, 3> kReserved = {
      "[P-PAD]", "[P-MASK]", "[P-UNK]"};

  PinyinVocab() = default;
  PinyinVocab(PinyinMode mode, std::vector<std::vector<std::string>> tables);

  PinyinMode mode() const { return mode_; }
  int components() const { return static_cast<int>(tables_.size()); }
  const std::vector<std::string>& table(int c) const { return tables_[c]; }
  int32_t table_size(int c) const {
    return static_cast<int32_t>(tables_[c].size());
  }
  std::vector<int32_t> table_sizes() const;

  // Id of a component value, or kUnk when not present.
  int32_t id(int c, const std::string& value) const;

  bool operator==(const PinyinVocab& o) const {
    return mode_ == o.mode_ && tables_ == o.tables_;
  }

  nlohmann::json to_json() const;
  static PinyinVocab from_json(const nlohmann::json& j);

 private:
  PinyinMode mode_ = PinyinMode::None;
  std::vector<std::vector<std::string>> tables_;
  std::vector<std::unordered_map<std::string, int32_t>> index_;
};

// Throws InvalidArgument for PinyinMode::None.
PinyinVocab build_pinyin_vocab(const PinyinDict& dict, PinyinMode mode);

// Component ids for one character position. Absent maps to [P-UNK] in every
// component; mode None yields an empty list.
std::vector<int32_t> pinyin_ids(const std::optional<Syllable>& syllable,
                                const PinyinVocab& vocab);

}  // namespace pymlm

#endif  // PYMLM_PINYIN_H_
