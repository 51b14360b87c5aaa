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

#include "pymlm/checkpoint.h"

#include <bit>
#include <cstring>

#include "pymlm/common.h"

namespace pymlm {
namespace {

uint32_t to_little_endian(uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) |
           (v >> 24);
  }
  return v;
}

}  // namespace

const Matrix<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, m] : ckpt.tensors) {
    const uint64_t bytes = static_cast<uint64_t>(m.size()) * 4;
    index.push_back({{"name", name},
                     {"shape", {m.rows(), m.cols()}},
                     {"offset", offset},
                     {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                                 {"meta", ckpt.meta},
                                 {"tensors", index}};
  std::string out = header.dump();
  out += '\n';
  const size_t data_start = out.size();
  out.resize(data_start + offset);
  char* dst = out.data() + data_start;
  for (const auto& [name, m] : ckpt.tensors) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const uint32_t bits = to_little_endian(std::bit_cast<uint32_t>(m.data()[i]));
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  const size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) {
    throw ParseError("checkpoint header is not newline terminated");
  }
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(0, nl));
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw ParseError("unsupported checkpoint format version " +
                       std::to_string(version));
    }
    ckpt.meta = header.at("meta");
    const std::string_view data = bytes.substr(nl + 1);
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<uint64_t>();
      const auto nbytes = t.at("bytes").get<uint64_t>();
      if (nbytes != static_cast<uint64_t>(rows * cols) * 4 ||
          offset + nbytes > data.size()) {
        throw ParseError("checkpoint tensor " + t.at("name").get<std::string>() +
                         " has inconsistent extent");
      }
      Matrix<float> m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, data.data() + offset + static_cast<uint64_t>(i) * 4, 4);
        m.data()[i] = std::bit_cast<float>(to_little_endian(bits));
      }
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

template <class T>
Checkpoint make_model_checkpoint(const ModelConfig& cfg,
                                 ModelParams<T>& params,
                                 const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.meta["config"] = cfg.to_json();
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) ckpt.meta[k] = v;
  }
  for (const auto& ref : params.refs()) {
    ckpt.tensors.emplace_back(ref.name, ref.value->template cast<float>());
  }
  return ckpt;
}

ModelConfig checkpoint_config(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) {
    throw ParseError("checkpoint has no model config");
  }
  try {
    return ModelConfig::from_json(ckpt.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model config: ") + e.what());
  }
}

template <class T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ckpt,
                                      const ModelConfig& cfg) {
  ModelParams<T> params = ModelParams<T>::zeros(cfg);
  for (auto& ref : params.refs()) {
    const Matrix<float>* m = ckpt.find(ref.name);
    if (m == nullptr) throw ParseError("checkpoint lacks tensor " + ref.name);
    if (m->rows() != ref.value->rows() || m->cols() != ref.value->cols()) {
      throw ParseError("checkpoint tensor " + ref.name + " has wrong shape");
    }
    *ref.value = m->template cast<T>();
  }
  return params;
}

template Checkpoint make_model_checkpoint(const ModelConfig&,
                                          ModelParams<float>&,
                                          const nlohmann::json&);
template Checkpoint make_model_checkpoint(const ModelConfig&,
                                          ModelParams<double>&,
                                          const nlohmann::json&);
template ModelParams<float> params_from_checkpoint(const Checkpoint&,
                                                   const ModelConfig&);
template ModelParams<double> params_from_checkpoint(const Checkpoint&,
                                                    const ModelConfig&);

}  // namespace pymlm
