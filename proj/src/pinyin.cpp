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

#include "pymlm/pinyin.h"

#include <algorithm>
#include <set>

#include "pymlm/common.h"

namespace pymlm {
namespace {

bool is_lower_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return c >= 'a' && c <= 'z'; });
}

std::string tone_key(const Syllable& s) {
  return s.text + std::to_string(s.tone);
}

}  // namespace

std::pair<std::string, std::string> decompose(std::string_view pinyin) {
  if (pinyin.empty() || !is_lower_ascii(pinyin)) {
    throw DecompositionError("not lowercase ASCII pinyin: '" +
                             std::string(pinyin) + "'");
  }
  std::string_view best;
  for (std::string_view ini : kInitials) {
    if (pinyin.starts_with(ini) && ini.size() > best.size()) best = ini;
  }
  if (best.empty()) return {std::string(kZeroInitial), std::string(pinyin)};
  if (best.size() == pinyin.size()) {
    throw DecompositionError("syllable has no final: '" + std::string(pinyin) +
                             "'");
  }
  return {std::string(best), std::string(pinyin.substr(best.size()))};
}

Syllable parse_syllable(std::string_view toned) {
  if (toned.size() < 2) {
    throw ParseError("pinyin too short: '" + std::string(toned) + "'");
  }
  const char digit = toned.back();
  if (digit < '1' || digit > '5') {
    throw ParseError("bad tone digit in '" + std::string(toned) + "'");
  }
  Syllable s;
  s.text = std::string(toned.substr(0, toned.size() - 1));
  s.tone = digit == '5' ? 0 : digit - '0';
  auto [initial, final] = decompose(s.text);
  s.initial = std::move(initial);
  s.final = std::move(final);
  return s;
}

void PinyinDict::add(char32_t ch, Syllable syllable) {
  if (!entries_.emplace(ch, std::move(syllable)).second) {
    throw DuplicateEntryError("duplicate dictionary entry for '" +
                              utf8_encode(ch) + "'");
  }
}

const Syllable* PinyinDict::find(char32_t ch) const {
  auto it = entries_.find(ch);
  return it == entries_.end() ? nullptr : &it->second;
}

PinyinDict parse_dictionary(std::string_view contents) {
  PinyinDict dict;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos < contents.size()) {
    size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const std::string where = "line " + std::to_string(line_no) + ": ";
    const size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw ParseError(where + "missing tab separator");
    }
    const std::u32string ch = utf8_decode(line.substr(0, tab));
    if (ch.size() != 1) {
      throw ParseError(where + "expected exactly one character");
    }
    Syllable syllable;
    try {
      syllable = parse_syllable(line.substr(tab + 1));
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
    try {
      dict.add(ch[0], std::move(syllable));
    } catch (const DuplicateEntryError& e) {
      throw DuplicateEntryError(where + e.what());
    }
  }
  return dict;
}

PinyinDict load_dictionary(const std::string& path) {
  return parse_dictionary(read_file(path));
}

std::optional<Syllable> to_syllable(char32_t ch, const PinyinDict& dict) {
  const Syllable* s = dict.find(ch);
  if (s == nullptr) return std::nullopt;
  return *s;
}

std::string to_string(PinyinMode mode) {
  switch (mode) {
    case PinyinMode::None:
      return "none";
    case PinyinMode::Plain:
      return "plain";
    case PinyinMode::PlainTone:
      return "plain_tone";
    case PinyinMode::InitFinal:
      return "init_final";
    case PinyinMode::InitFinalTone:
      return "init_final_tone";
  }
  return "none";
}

PinyinMode parse_pinyin_mode(std::string_view name) {
  for (PinyinMode m : {PinyinMode::None, PinyinMode::Plain,
                       PinyinMode::PlainTone, PinyinMode::InitFinal,
                       PinyinMode::InitFinalTone}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidArgument("unknown pinyin mode: '" + std::string(name) + "'");
}

int component_count(PinyinMode mode) {
  switch (mode) {
    case PinyinMode::None:
      return 0;
    case PinyinMode::Plain:
    case PinyinMode::PlainTone:
      return 1;
    case PinyinMode::InitFinal:
      return 2;
    case PinyinMode::InitFinalTone:
      return 3;
  }
  return 0;
}

PinyinVocab::PinyinVocab(PinyinMode mode,
                         std::vector<std::vector<std::string>> tables)
    : mode_(mode), tables_(std::move(tables)) {
  if (static_cast<int>(tables_.size()) != component_count(mode_)) {
    throw InvalidArgument("pinyin vocab table count does not match mode " +
                          to_string(mode_));
  }
  for (const auto& table : tables_) {
    if (table.size() < kReserved.size() ||
        !std::equal(kReserved.begin(), kReserved.end(), table.begin())) {
      throw InvalidArgument("pinyin vocab table lacks reserved ids");
    }
    auto& idx = index_.emplace_back();
    for (size_t i = 0; i < table.size(); ++i) {
      if (!idx.emplace(table[i], static_cast<int32_t>(i)).second) {
        throw DuplicateEntryError("duplicate pinyin vocab entry: " + table[i]);
      }
    }
  }
}

std::vector<int32_t> PinyinVocab::table_sizes() const {
  std::vector<int32_t> sizes;
  for (int c = 0; c < components(); ++c) sizes.push_back(table_size(c));
  return sizes;
}

int32_t PinyinVocab::id(int c, const std::string& value) const {
  auto it = index_[c].find(value);
  return it == index_[c].end() ? kUnk : it->second;
}

nlohmann::json PinyinVocab::to_json() const {
  return {{"mode", to_string(mode_)}, {"tables", tables_}};
}

PinyinVocab PinyinVocab::from_json(const nlohmann::json& j) {
  return PinyinVocab(parse_pinyin_mode(j.at("mode").get<std::string>()),
                     j.at("tables").get<std::vector<std::vector<std::string>>>());
}

PinyinVocab build_pinyin_vocab(const PinyinDict& dict, PinyinMode mode) {
  if (mode == PinyinMode::None) {
    throw InvalidArgument("pinyin vocab requested for mode none");
  }
  const int n = component_count(mode);
  std::vector<std::set<std::string>> values(n);
  for (const auto& [ch, s] : dict.entries()) {
    switch (mode) {
      case PinyinMode::Plain:
        values[0].insert(s.text);
        break;
      case PinyinMode::PlainTone:
        values[0].insert(tone_key(s));
        break;
      case PinyinMode::InitFinalTone:
        values[2].insert(std::to_string(s.tone));
        [[fallthrough]];
      case PinyinMode::InitFinal:
        values[0].insert(s.initial);
        values[1].insert(s.final);
        break;
      case PinyinMode::None:
        break;
    }
  }
  std::vector<std::vector<std::string>> tables(n);
  for (int c = 0; c < n; ++c) {
    tables[c].assign(PinyinVocab::kReserved.begin(),
                     PinyinVocab::kReserved.end());
    tables[c].insert(tables[c].end(), values[c].begin(), values[c].end());
  }
  return PinyinVocab(mode, std::move(tables));
}

std::vector<int32_t> pinyin_ids(const std::optional<Syllable>& syllable,
                                const PinyinVocab& vocab) {
  const int n = vocab.components();
  if (!syllable) return std::vector<int32_t>(n, PinyinVocab::kUnk);
  const Syllable& s = *syllable;
  switch (vocab.mode()) {
    case PinyinMode::None:
      return {};
    case PinyinMode::Plain:
      return {vocab.id(0, s.text)};
    case PinyinMode::PlainTone:
      return {vocab.id(0, tone_key(s))};
    case PinyinMode::InitFinal:
      return {vocab.id(0, s.initial), vocab.id(1, s.final)};
    case PinyinMode::InitFinalTone:
      return {vocab.id(0, s.initial), vocab.id(1, s.final),
              vocab.id(2, std::to_string(s.tone))};
  }
  return {};
}

}  // namespace pymlm
