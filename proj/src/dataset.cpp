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

#include "pymlm/dataset.h"

#include <algorithm>
#include <set>

namespace pymlm {

std::string to_string(Task t) {
  return t == Task::Classify ? "classify" : "tag";
}

Task parse_task(std::string_view name) {
  if (name == "classify") return Task::Classify;
  if (name == "tag") return Task::Tag;
  throw InvalidArgument("unknown task: '" + std::string(name) + "'");
}

int LabeledDataset::label_index(const std::string& label) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return -1;
  return static_cast<int>(it - labels.begin());
}

void LabeledDataset::validate() const {
  if (!std::is_sorted(labels.begin(), labels.end())) {
    throw DataError("label inventory is not sorted");
  }
  for (size_t i = 0; i < examples.size(); ++i) {
    const LabeledExample& ex = examples[i];
    const std::string where = "example " + std::to_string(i + 1) + ": ";
    if (task == Task::Classify) {
      if (label_index(ex.label) < 0) {
        throw DataError(where + "label '" + ex.label + "' not in inventory");
      }
      continue;
    }
    if (ex.tags.size() != utf8_decode(ex.text).size()) {
      throw DataError(where + "tag count differs from character count");
    }
    for (const auto& tag : ex.tags) {
      if (label_index(tag) < 0) {
        throw DataError(where + "tag '" + tag + "' not in inventory");
      }
    }
  }
}

LabeledDataset parse_dataset(std::string_view jsonl,
                             const std::vector<std::string>& labels) {
  LabeledDataset ds;
  std::set<std::string> seen;
  size_t line_no = 0;
  size_t pos = 0;
  bool first = true;
  while (pos < jsonl.size()) {
    size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    LabeledExample ex;
    try {
      const auto j = nlohmann::json::parse(line);
      ex.text = j.at("text").get<std::string>();
      const bool tagged = j.contains("tags");
      if (first) {
        ds.task = tagged ? Task::Tag : Task::Classify;
        first = false;
      } else if (tagged != (ds.task == Task::Tag)) {
        throw DataError(where + "mixes classification and tagging records");
      }
      if (tagged) {
        ex.tags = j.at("tags").get<std::vector<std::string>>();
        seen.insert(ex.tags.begin(), ex.tags.end());
      } else {
        ex.label = j.at("label").get<std::string>();
        seen.insert(ex.label);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    ds.examples.push_back(std::move(ex));
  }
  if (labels.empty()) {
    if (ds.task == Task::Tag) seen.insert("O");
    ds.labels.assign(seen.begin(), seen.end());
  } else {
    ds.labels = labels;
    std::sort(ds.labels.begin(), ds.labels.end());
  }
  ds.validate();
  return ds;
}

LabeledDataset load_dataset(const std::string& path,
                            const std::vector<std::string>& labels) {
  try {
    return parse_dataset(read_file(path), labels);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string serialize_dataset(const LabeledDataset& ds) {
  std::string out;
  for (const auto& ex : ds.examples) {
    nlohmann::ordered_json j = {{"text", ex.text}};
    if (ds.task == Task::Tag) {
      j["tags"] = ex.tags;
    } else {
      j["label"] = ex.label;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::string& path, const LabeledDataset& ds) {
  write_file(path, serialize_dataset(ds));
}

nlohmann::json NoiseStats::to_json() const {
  return {{"rate", rate},
          {"examples", examples},
          {"substitutions", substitutions},
          {"replaceable", replaceable},
          {"unreplaceable_examples", unreplaceable_examples}};
}

NoisyDataset inject_noise(const LabeledDataset& ds, double rate,
                          const EvalConfusionSet& confusion, Rng& rng) {
  if (!(rate >= 0 && rate <= 1)) {
    throw InvalidArgument("noise rate must lie in [0, 1]");
  }
  NoisyDataset out{ds, {}};
  out.stats.rate = rate;
  out.stats.examples = ds.size();
  for (LabeledExample& ex : out.data.examples) {
    std::u32string text = utf8_decode(ex.text);
    std::vector<int> replaceable;
    for (size_t i = 0; i < text.size(); ++i) {
      if (confusion.pairs_for(text[i]) != nullptr) {
        replaceable.push_back(static_cast<int>(i));
      }
    }
    out.stats.replaceable += replaceable.size();
    if (rate > 0 && replaceable.empty()) {
      ++out.stats.unreplaceable_examples;
      continue;
    }
    const auto n = static_cast<size_t>(
        round_half_up(rate * static_cast<double>(replaceable.size())));
    // Partial Fisher-Yates over the replaceable positions.
    for (size_t k = 0; k < n; ++k) {
      const size_t j = k + rng.below(replaceable.size() - k);
      std::swap(replaceable[k], replaceable[j]);
      char32_t& ch = text[replaceable[k]];
      const auto& pairs = *confusion.pairs_for(ch);
      uint64_t total = 0;
      for (const auto& p : pairs) total += p.count;
      uint64_t pick = rng.below(total);
      for (const auto& p : pairs) {
        if (pick < p.count) {
          ch = p.noisy;
          break;
        }
        pick -= p.count;
      }
      ++out.stats.substitutions;
    }
    ex.text = utf8_encode(text);
  }
  return out;
}

}  // namespace pymlm
