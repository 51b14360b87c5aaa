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

#ifndef PYMLM_METRICS_H_
#define PYMLM_METRICS_H_

#include <string>
#include <tuple>
#include <vector>

#include "pymlm/common.h"

namespace pymlm {

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Unweighted mean of per-label F1 over every label that occurs in gold or
// predicted. Per-label F1 is 2TP / (2TP + FP + FN).
double macro_f1(const std::vector<int>& gold, const std::vector<int>& pred);

struct Span {
  int begin;  // inclusive
  int end;    // exclusive
  std::string type;
  auto operator<=>(const Span&) const = default;
};

// Decodes BIO tags into typed spans. An I-x that follows O or a different
// type opens a new span, as if it were B-x. Throws DataError on tags other
// than O, B-*, I-*.
std::vector<Span> bio_spans(const std::vector<std::string>& tags);

// Micro-averaged span F1 with exact boundary and type match. A corpus with
// no gold and no predicted spans scores 1.
double entity_f1(const std::vector<std::vector<std::string>>& gold,
                 const std::vector<std::vector<std::string>>& pred);

}  // namespace pymlm

#endif  // PYMLM_METRICS_H_
