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

#ifndef PYMLM_OPTIMIZER_H_
#define PYMLM_OPTIMIZER_H_

#include <cstdint>
#include <vector>

#include "pymlm/model.h"

namespace pymlm {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  int64_t total_steps = 1;
};

// Linear warmup over round(warmup_ratio * total) steps, then linear decay
// reaching zero at the final step. `step` is 1-based.
double scheduled_lr(const AdamWConfig& cfg, int64_t step);

// Adam with bias correction followed by decoupled weight decay on the
// tensors flagged for decay.
template <class T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<ParamRef<T>>& params);

  // params and grads must list the same tensors in the same order.
  void step(const std::vector<ParamRef<T>>& params,
            const std::vector<ParamRef<T>>& grads);

  int64_t steps() const { return step_; }
  double last_lr() const { return last_lr_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
  int64_t step_ = 0;
  double last_lr_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace pymlm

#endif  // PYMLM_OPTIMIZER_H_
