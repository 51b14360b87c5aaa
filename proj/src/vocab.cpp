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

#include "pymlm/vocab.h"

#include <algorithm>
#include <map>

#include "pymlm/common.h"

namespace pymlm {

CharVocab::CharVocab() {
  chars_.assign(kNumSpecials, 0);
  freq_.assign(kNumSpecials, 0);
}

void CharVocab::append(char32_t ch, uint64_t count) {
  if (!index_.emplace(ch, size()).second) {
    throw DuplicateEntryError("duplicate vocab character '" + utf8_encode(ch) +
                              "'");
  }
  chars_.push_back(ch);
  freq_.push_back(count);
}

int32_t CharVocab::id(char32_t ch) const {
  auto it = index_.find(ch);
  return it == index_.end() ? kUnk : it->second;
}

std::string CharVocab::token(int32_t id) const {
  if (is_special(id)) return std::string(kSpecials[id]);
  return utf8_encode(chars_[id]);
}

std::string CharVocab::serialize() const {
  std::string out;
  for (int32_t i = 0; i < size(); ++i) {
    out += token(i);
    out += '\t';
    out += std::to_string(freq_[i]);
    out += '\n';
  }
  return out;
}

CharVocab CharVocab::parse(std::string_view contents) {
  CharVocab vocab;
  size_t pos = 0;
  int line_no = 0;
  while (pos < contents.size()) {
    size_t end = contents.find('\n', pos);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string where = "vocab line " + std::to_string(line_no) + ": ";
    const size_t tab = line.rfind('\t');
    if (tab == std::string_view::npos) throw ParseError(where + "missing tab");
    const std::string_view tok = line.substr(0, tab);
    uint64_t count = 0;
    try {
      count = std::stoull(std::string(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw ParseError(where + "bad count");
    }
    if (line_no <= kNumSpecials) {
      if (tok != kSpecials[line_no - 1] || count != 0) {
        throw ParseError(where + "expected special " +
                         std::string(kSpecials[line_no - 1]) + " with count 0");
      }
      continue;
    }
    const std::u32string ch = utf8_decode(tok);
    if (ch.size() != 1) throw ParseError(where + "expected one character");
    vocab.append(ch[0], count);
  }
  if (line_no < kNumSpecials) throw ParseError("vocab file lacks specials");
  return vocab;
}

void CharVocab::save(const std::string& path) const {
  write_file(path, serialize());
}

CharVocab CharVocab::load(const std::string& path) {
  return parse(read_file(path));
}

CharVocab build_char_vocab(const std::vector<std::string>& corpus,
                           uint64_t min_freq) {
  if (min_freq < 1) throw InvalidArgument("min_freq must be >= 1");
  std::map<char32_t, uint64_t> counts;
  for (const std::string& line : corpus) {
    for (char32_t ch : utf8_decode(line)) {
      if (ch == U'\n' || ch == U'\r') continue;
      ++counts[ch];
    }
  }
  std::vector<std::pair<char32_t, uint64_t>> ranked;
  for (const auto& [ch, n] : counts) {
    if (n >= min_freq) ranked.emplace_back(ch, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  CharVocab vocab;
  for (const auto& [ch, n] : ranked) vocab.append(ch, n);
  return vocab;
}

TextEncoder::TextEncoder(const CharVocab& vocab, const PinyinDict& dict,
                         PinyinMode mode, PinyinVocab pinyin_vocab)
    : vocab_(&vocab),
      dict_(&dict),
      mode_(mode),
      pinyin_vocab_(std::move(pinyin_vocab)),
      components_(component_count(mode)) {
  if (mode_ != PinyinMode::None && pinyin_vocab_.mode() != mode_) {
    throw InvalidArgument("pinyin vocab mode " +
                          to_string(pinyin_vocab_.mode()) +
                          " does not match encoder mode " + to_string(mode_));
  }
  rows_.assign(static_cast<size_t>(vocab.size()) * components_,
               PinyinVocab::kPad);
  for (int32_t id = CharVocab::kNumSpecials; id < vocab.size(); ++id) {
    const auto ids = pinyin_ids(to_syllable(vocab.character(id), dict),
                                pinyin_vocab_);
    std::copy(ids.begin(), ids.end(),
              rows_.begin() + static_cast<ptrdiff_t>(id) * components_);
  }
  for (int c = 0; c < components_; ++c) {
    rows_[static_cast<size_t>(CharVocab::kUnk) * components_ + c] =
        PinyinVocab::kUnk;
  }
}

TokenSequence TextEncoder::encode(std::u32string_view text,
                                  int max_len) const {
  if (max_len < 3) throw InvalidArgument("max_len must be >= 3");
  const size_t body =
      std::min(text.size(), static_cast<size_t>(max_len - 2));
  TokenSequence seq;
  seq.components = components_;
  seq.char_ids.reserve(body + 2);
  const auto push = [&](int32_t id) {
    seq.char_ids.push_back(id);
    const int32_t* row = pinyin_row(id);
    seq.pinyin_ids.insert(seq.pinyin_ids.end(), row, row + components_);
  };
  push(CharVocab::kCls);
  for (size_t i = 0; i < body; ++i) push(vocab_->id(text[i]));
  push(CharVocab::kSep);
  seq.segment_ids.assign(seq.char_ids.size(), 0);
  return seq;
}

TokenSequence TextEncoder::encode(std::string_view utf8_text,
                                  int max_len) const {
  return encode(std::u32string_view(utf8_decode(utf8_text)), max_len);
}

TokenSequence encode(std::string_view text, const CharVocab& vocab,
                     const PinyinDict& dict, PinyinMode mode,
                     const PinyinVocab& pinyin_vocab, int max_len) {
  return TextEncoder(vocab, dict, mode, pinyin_vocab).encode(text, max_len);
}

TokenSequence pad_to(const TokenSequence& seq, int length) {
  TokenSequence out = seq;
  while (out.length() < length) {
    out.char_ids.push_back(CharVocab::kPad);
    out.segment_ids.push_back(0);
    for (int c = 0; c < out.components; ++c) {
      out.pinyin_ids.push_back(PinyinVocab::kPad);
    }
  }
  return out;
}

}  // namespace pymlm
