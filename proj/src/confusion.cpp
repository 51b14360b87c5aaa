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

#include "pymlm/confusion.h"

#include <cmath>

namespace pymlm {
namespace {

constexpr double kWeightTolerance = 1e-9;

char32_t single_char(const std::string& s) {
  const std::u32string u = utf8_decode(s);
  if (u.size() != 1) throw ParseError("expected one character, got '" + s + "'");
  return u[0];
}

// Normalises counts within each class into weights (uniform at zero total).
template <class Counts>
std::map<std::string, std::vector<ConfusionCandidate>> normalise(
    const Counts& counts) {
  std::map<std::string, std::vector<ConfusionCandidate>> classes;
  for (const auto& [key, members] : counts) {
    double total = 0;
    for (const auto& m : members) total += static_cast<double>(m.second);
    auto& out = classes[key];
    for (const auto& m : members) {
      const double w = total > 0 ? static_cast<double>(m.second) / total
                                 : 1.0 / static_cast<double>(members.size());
      out.push_back({m.first, w});
    }
  }
  return classes;
}

}  // namespace

std::string to_string(Provenance p) {
  return p == Provenance::Pretrain ? "pretrain" : "eval";
}

std::string to_string(SamplingStrategy s) {
  return s == SamplingStrategy::Frequency ? "frequency" : "uniform";
}

SamplingStrategy parse_sampling_strategy(std::string_view name) {
  if (name == "frequency") return SamplingStrategy::Frequency;
  if (name == "uniform") return SamplingStrategy::Uniform;
  throw InvalidArgument("unknown sampling strategy: '" + std::string(name) +
                        "'");
}

template <Provenance P>
ConfusionSet<P>::ConfusionSet(Classes classes, Pairs pairs,
                              uint64_t skipped_pairs)
    : classes_(std::move(classes)),
      pairs_(std::move(pairs)),
      skipped_(skipped_pairs) {
  for (const auto& [key, members] : classes_) {
    if (members.empty()) throw InvalidArgument("empty confusion class " + key);
    double sum = 0;
    for (const auto& m : members) {
      if (!(m.weight > 0)) {
        throw InvalidArgument("non-positive weight in confusion class " + key);
      }
      sum += m.weight;
      if (!class_index_.emplace(m.ch, key).second) {
        throw DuplicateEntryError("character '" + utf8_encode(m.ch) +
                                  "' appears in more than one class");
      }
    }
    if (std::abs(sum - 1.0) > kWeightTolerance) {
      throw InvalidArgument("weights of class " + key + " do not sum to 1");
    }
  }
}

template <Provenance P>
const std::string* ConfusionSet<P>::class_of(char32_t ch) const {
  auto it = class_index_.find(ch);
  return it == class_index_.end() ? nullptr : &it->second;
}

template <Provenance P>
const std::vector<ConfusionCandidate>* ConfusionSet<P>::members(
    char32_t ch) const {
  const std::string* key = class_of(ch);
  return key == nullptr ? nullptr : &classes_.at(*key);
}

template <Provenance P>
const std::vector<ConfusionPair>* ConfusionSet<P>::pairs_for(
    char32_t clean) const {
  auto it = pairs_.find(clean);
  return it == pairs_.end() ? nullptr : &it->second;
}

template <Provenance P>
nlohmann::json ConfusionSet<P>::to_json() const {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [key, members] : classes_) {
    auto arr = nlohmann::json::array();
    for (const auto& m : members) arr.push_back({utf8_encode(m.ch), m.weight});
    classes[key] = std::move(arr);
  }
  nlohmann::json j = {{"provenance", to_string(P)}, {"classes", classes}};
  if constexpr (P == Provenance::Eval) {
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [clean, list] : pairs_) {
      auto arr = nlohmann::json::array();
      for (const auto& p : list) arr.push_back({utf8_encode(p.noisy), p.count});
      pairs[utf8_encode(clean)] = std::move(arr);
    }
    j["pairs"] = std::move(pairs);
    j["skipped"] = skipped_;
  }
  return j;
}

template <Provenance P>
ConfusionSet<P> ConfusionSet<P>::from_json(const nlohmann::json& j) {
  try {
    const auto prov = j.at("provenance").get<std::string>();
    if (prov != to_string(P)) {
      throw ParseError("confusion set provenance is '" + prov +
                       "', expected '" + to_string(P) + "'");
    }
    Classes classes;
    for (const auto& [key, arr] : j.at("classes").items()) {
      auto& out = classes[key];
      for (const auto& m : arr) {
        out.push_back({single_char(m.at(0).template get<std::string>()),
                       m.at(1).template get<double>()});
      }
    }
    Pairs pairs;
    uint64_t skipped = 0;
    if constexpr (P == Provenance::Eval) {
      for (const auto& [clean, arr] : j.at("pairs").items()) {
        auto& out = pairs[single_char(clean)];
        for (const auto& p : arr) {
          out.push_back({single_char(p.at(0).template get<std::string>()),
                         p.at(1).template get<uint64_t>()});
        }
      }
      skipped = j.value("skipped", uint64_t{0});
    }
    return ConfusionSet(std::move(classes), std::move(pairs), skipped);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed confusion set JSON: ") + e.what());
  }
}

template <Provenance P>
void ConfusionSet<P>::save(const std::string& path) const {
  write_file(path, to_json().dump(1) + "\n");
}

template <Provenance P>
ConfusionSet<P> ConfusionSet<P>::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return from_json(j);
}

template class ConfusionSet<Provenance::Pretrain>;
template class ConfusionSet<Provenance::Eval>;

PretrainConfusionSet build_confusion_set(const CharVocab& vocab,
                                         const PinyinDict& dict) {
  std::map<std::string, std::vector<std::pair<char32_t, uint64_t>>> counts;
  for (int32_t id = CharVocab::kNumSpecials; id < vocab.size(); ++id) {
    const Syllable* s = dict.find(vocab.character(id));
    if (s == nullptr) continue;
    counts[s->text].emplace_back(vocab.character(id), vocab.freq(id));
  }
  return PretrainConfusionSet(normalise(counts));
}

template <Provenance P>
char32_t sample_confusable(const ConfusionSet<P>& set, char32_t ch,
                           SamplingStrategy strategy, Rng& rng) {
  const auto* members = set.members(ch);
  if (members == nullptr) {
    throw NoClassError("no confusion class for '" + utf8_encode(ch) + "'");
  }
  if (members->size() == 1) return ch;
  if (strategy == SamplingStrategy::Uniform) {
    uint64_t k = rng.below(members->size() - 1);
    for (const auto& m : *members) {
      if (m.ch == ch) continue;
      if (k-- == 0) return m.ch;
    }
  }
  double total = 0;
  for (const auto& m : *members) {
    if (m.ch != ch) total += m.weight;
  }
  const double target = rng.uniform() * total;
  double acc = 0;
  char32_t last = ch;
  for (const auto& m : *members) {
    if (m.ch == ch) continue;
    acc += m.weight;
    last = m.ch;
    if (target < acc) return m.ch;
  }
  return last;
}

template char32_t sample_confusable(const PretrainConfusionSet&, char32_t,
                                    SamplingStrategy, Rng&);
template char32_t sample_confusable(const EvalConfusionSet&, char32_t,
                                    SamplingStrategy, Rng&);

EvalConfusionSet build_eval_confusion_set(
    const std::vector<std::string>& pair_lines, const PinyinDict& dict,
    const EvalConfusionSet* base) {
  std::map<char32_t, std::map<char32_t, uint64_t>> tally;
  uint64_t skipped = 0;
  if (base != nullptr) {
    for (const auto& [clean, list] : base->pairs()) {
      for (const auto& p : list) tally[clean][p.noisy] += p.count;
    }
    skipped = base->skipped_pairs();
  }
  for (const std::string& line : pair_lines) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      ++skipped;
      continue;
    }
    const std::u32string clean = utf8_decode(line.substr(0, tab));
    const std::u32string noisy = utf8_decode(line.substr(tab + 1));
    if (clean.size() != noisy.size()) {
      ++skipped;
      continue;
    }
    for (size_t i = 0; i < clean.size(); ++i) {
      if (clean[i] != noisy[i]) ++tally[clean[i]][noisy[i]];
    }
  }

  EvalConfusionSet::Pairs pairs;
  std::map<std::string, std::vector<std::pair<char32_t, uint64_t>>> counts;
  for (const auto& [clean, noisy_counts] : tally) {
    uint64_t total = 0;
    auto& out = pairs[clean];
    for (const auto& [noisy, n] : noisy_counts) {
      out.push_back({noisy, n});
      total += n;
    }
    const Syllable* s = dict.find(clean);
    counts[s ? s->text : std::string(kUnknownClass)].emplace_back(clean,
                                                                  total);
  }
  return EvalConfusionSet(normalise(counts), std::move(pairs), skipped);
}

EvalConfusionSet build_eval_confusion_set(const std::string& pairs_path,
                                          const PinyinDict& dict,
                                          const EvalConfusionSet* base) {
  return build_eval_confusion_set(read_lines(pairs_path), dict, base);
}

}  // namespace pymlm
