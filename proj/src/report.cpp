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

#include "pymlm/report.h"

#include <bit>
#include <cstdio>

namespace pymlm {
namespace {

enum Split : uint64_t { kTrainSplit = 1, kTestSplit = 2, kFinetune = 3 };

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

const ReportRow* RobustnessReport::find(const std::string& variant,
                                        double rate) const {
  for (const auto& row : rows) {
    if (row.variant == variant && row.rate == rate) return &row;
  }
  return nullptr;
}

std::string RobustnessReport::to_tsv() const {
  std::string out = "variant\trate\tf1\n";
  for (const auto& row : rows) {
    out += row.variant + "\t" + format_double("%g", row.rate) + "\t" +
           format_double("%.6f", row.f1) + "\n";
  }
  return out;
}

RobustnessReport robustness_report(const std::vector<ReportVariant>& variants,
                                   const LabeledDataset& train,
                                   const LabeledDataset& test,
                                   const EvalConfusionSet& confusion,
                                   const ReportConfig& cfg) {
  if (cfg.seeds.empty()) throw InvalidArgument("report needs at least one seed");
  for (double rate : cfg.rates) {
    if (!(rate >= 0 && rate <= 1)) {
      throw InvalidArgument("noise rates must lie in [0, 1]");
    }
  }
  RobustnessReport report;
  nlohmann::json noise = nlohmann::json::array();
  for (const auto& v : variants) {
    for (double rate : cfg.rates) {
      ReportRow row{v.name, rate, 0, {}};
      for (uint64_t seed : cfg.seeds) {
        const uint64_t rate_key = std::bit_cast<uint64_t>(rate);
        Rng train_rng(derive_seed(seed, {rate_key, kTrainSplit}));
        Rng test_rng(derive_seed(seed, {rate_key, kTestSplit}));
        const NoisyDataset noisy_train =
            inject_noise(train, cfg.noise_train ? rate : 0.0, confusion,
                         train_rng);
        const NoisyDataset noisy_test =
            inject_noise(test, rate, confusion, test_rng);
        if (&v == &variants.front()) {
          noise.push_back({{"seed", seed},
                           {"train", noisy_train.stats.to_json()},
                           {"test", noisy_test.stats.to_json()}});
        }
        FinetuneConfig fcfg = cfg.finetune;
        fcfg.seed = derive_seed(seed, {rate_key, kFinetune});
        const TaskModel model =
            finetune(*v.checkpoint, noisy_train.data, *v.encoder, fcfg);
        row.seed_f1.push_back(evaluate_f1(model, noisy_test.data, *v.encoder));
      }
      double sum = 0;
      for (double f : row.seed_f1) sum += f;
      row.f1 = sum / static_cast<double>(row.seed_f1.size());
      report.rows.push_back(std::move(row));
    }
  }
  nlohmann::json variant_names = nlohmann::json::array();
  for (const auto& v : variants) variant_names.push_back(v.name);
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& row : report.rows) {
    per_seed.push_back(
        {{"variant", row.variant}, {"rate", row.rate}, {"f1", row.seed_f1}});
  }
  report.metadata = {{"dataset_id", cfg.dataset_id},
                     {"task", to_string(test.task)},
                     {"seeds", cfg.seeds},
                     {"rates", cfg.rates},
                     {"variants", variant_names},
                     {"noise_train", cfg.noise_train},
                     {"finetune", cfg.finetune.to_json()},
                     {"noise", noise},
                     {"per_seed", per_seed}};
  return report;
}

std::string export_embeddings(const Checkpoint& ckpt,
                              const TextEncoder& encoder,
                              std::u32string_view chars,
                              std::vector<std::string>* warnings) {
  const ModelConfig cfg = checkpoint_config(ckpt);
  const Matrix<float>* table = ckpt.find("embeddings.char");
  if (table == nullptr || table->rows() != encoder.vocab().size() ||
      table->cols() != cfg.hidden) {
    throw ParseError("checkpoint character table does not match the vocabulary");
  }
  std::string out = "char\tpinyin\tvector\n";
  for (char32_t ch : chars) {
    if (!encoder.vocab().contains(ch)) {
      if (warnings != nullptr) {
        warnings->push_back("character '" + utf8_encode(ch) +
                            "' is not in the vocabulary; skipped");
      }
      continue;
    }
    const Syllable* s = encoder.dict().find(ch);
    out += utf8_encode(ch) + "\t" + (s ? s->text : "[UNK]") + "\t";
    const auto row = table->row(encoder.vocab().id(ch));
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (i > 0) out += ',';
      out += format_double("%.9g", row(i));
    }
    out += '\n';
  }
  return out;
}

ProbeResult recovery_probe(const ModelParams<float>& params,
                           const ModelConfig& cfg, const TextEncoder& encoder,
                           const std::vector<std::string>& sentences,
                           Branch branch, double rate, uint64_t seed) {
  ProbeResult result;
  constexpr size_t kChunk = 64;
  for (size_t b = 0; b < sentences.size(); b += kChunk) {
    std::vector<MaskedInstance> chunk;
    for (size_t i = b; i < std::min(b + kChunk, sentences.size()); ++i) {
      const TokenSequence seq = encoder.encode(sentences[i], cfg.max_len);
      Rng rng(derive_seed(seed, {i}));
      const auto positions = select_candidates(seq, rate, rng);
      chunk.push_back(mask_positions(seq, positions, branch));
    }
    const Batch batch = Batch::pack(chunk);
    std::vector<int> rows;
    for (int r = 0; r < batch.rows(); ++r) {
      if (batch.token_labels[r] != kIgnore) rows.push_back(r);
    }
    const auto pred = predict_tokens(batch, params, cfg, rows);
    for (size_t k = 0; k < rows.size(); ++k) {
      ++result.positions;
      result.correct += pred[k] == batch.token_labels[rows[k]] ? 1 : 0;
    }
  }
  return result;
}

}  // namespace pymlm
