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

#include "pymlm/optimizer.h"

#include <algorithm>
#include <cmath>

namespace pymlm {

double scheduled_lr(const AdamWConfig& cfg, int64_t step) {
  const int64_t total = std::max<int64_t>(cfg.total_steps, 1);
  const int64_t warmup = std::min<int64_t>(
      round_half_up(cfg.warmup_ratio * static_cast<double>(total)), total);
  if (step <= warmup) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double remaining = static_cast<double>(std::max<int64_t>(total - step, 0));
  return cfg.lr * remaining / static_cast<double>(total - warmup);
}

template <class T>
AdamW<T>::AdamW(AdamWConfig cfg, const std::vector<ParamRef<T>>& params)
    : cfg_(cfg) {
  for (const auto& p : params) {
    m_.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
    v_.push_back(Matrix<T>::Zero(p.value->rows(), p.value->cols()));
  }
}

template <class T>
void AdamW<T>::step(const std::vector<ParamRef<T>>& params,
                    const std::vector<ParamRef<T>>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw InvalidArgument("optimizer tensor count mismatch");
  }
  ++step_;
  const double lr = scheduled_lr(cfg_, step_);
  last_lr_ = lr;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  const T shrink = static_cast<T>(1.0 - lr * cfg_.weight_decay);

  for (size_t i = 0; i < m_.size(); ++i) {
    Matrix<T>& p = *params[i].value;
    const Matrix<T>& g = *grads[i].value;
    if (p.rows() != g.rows() || p.cols() != g.cols() ||
        p.rows() != m_[i].rows() || p.cols() != m_[i].cols()) {
      throw InvalidArgument("optimizer shape mismatch for " + params[i].name);
    }
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (T(1) - b2) * g.array().square();
    p.array() -= step_size * m_[i].array() /
                 (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
    if (params[i].decay && cfg_.weight_decay != 0) p *= shrink;
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace pymlm
