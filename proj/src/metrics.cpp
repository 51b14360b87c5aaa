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

#include "pymlm/metrics.h"

#include <algorithm>
#include <map>
#include <set>

#include "pymlm/dataset.h"

namespace pymlm {

double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred) {
  if (gold.empty()) throw UndefinedMetricError("F1 of an empty dataset");
  if (gold.size() != pred.size()) {
    throw InvalidArgument("gold and predicted label counts differ");
  }
  struct Counts {
    long tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Counts> per_label;
  for (size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++per_label[gold[i]].tp;
    } else {
      ++per_label[gold[i]].fn;
      ++per_label[pred[i]].fp;
    }
  }
  double sum = 0;
  for (const auto& [label, c] : per_label) {
    sum += 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  }
  return sum / static_cast<double>(per_label.size());
}

std::vector<Span> bio_spans(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  std::string open;  // type of the span being extended, empty if none
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& t = tags[i];
    if (t == "O") {
      open.clear();
      continue;
    }
    if (t.size() < 3 || t[1] != '-' || (t[0] != 'B' && t[0] != 'I')) {
      throw DataError("not a BIO tag: '" + t + "'");
    }
    const std::string type = t.substr(2);
    if (t[0] == 'I' && open == type) {
      spans.back().end = i + 1;
      continue;
    }
    spans.push_back({i, i + 1, type});
    open = type;
  }
  return spans;
}

double entity_f1(const std::vector<std::vector<std::string>>& gold,
                 const std::vector<std::vector<std::string>>& pred) {
  if (gold.empty()) throw UndefinedMetricError("F1 of an empty dataset");
  if (gold.size() != pred.size()) {
    throw InvalidArgument("gold and predicted sequence counts differ");
  }
  long n_gold = 0, n_pred = 0, tp = 0;
  for (size_t i = 0; i < gold.size(); ++i) {
    const auto g = bio_spans(gold[i]);
    const auto p = bio_spans(pred[i]);
    const std::set<Span> gs(g.begin(), g.end());
    n_gold += static_cast<long>(g.size());
    n_pred += static_cast<long>(p.size());
    for (const auto& s : p) tp += gs.count(s) ? 1 : 0;
  }
  if (n_gold + n_pred == 0) return 1.0;
  return 2.0 * tp / static_cast<double>(n_gold + n_pred);
}

}  // namespace pymlm
