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

#ifndef PYMLM_CHECKPOINT_H_
#define PYMLM_CHECKPOINT_H_

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pymlm/model.h"

namespace pymlm {

inline constexpr int kCheckpointFormatVersion = 1;

// On disk: one line of compact JSON
//   {"format_version":1,"meta":{...},"tensors":[{"name":..,"shape":[r,c],
//    "offset":..,"bytes":..},...]}
// terminated by '\n', followed by the tensors as little-endian float32,
// row-major, concatenated in header order. Offsets are relative to the
// first byte after the newline.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix<float>>> tensors;

  const Matrix<float>* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// meta["config"] holds the model config; `extra` entries are merged into
// meta.
template <class T>
Checkpoint make_model_checkpoint(const ModelConfig& cfg,
                                 ModelParams<T>& params,
                                 const nlohmann::json& extra = {});

ModelConfig checkpoint_config(const Checkpoint& ckpt);

// Reads every model tensor, checking names and shapes against cfg.
template <class T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt,
                                      const ModelConfig& cfg);

}  // namespace pymlm

#endif  // PYMLM_CHECKPOINT_H_
