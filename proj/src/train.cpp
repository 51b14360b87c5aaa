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

#include "pymlm/train.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pymlm/metrics.h"
#include "pymlm/optimizer.h"

namespace pymlm {
namespace {

// Sub-stream identifiers for derive_seed.
enum Stream : uint64_t {
  kInitStream = 1,
  kMaskStream = 2,
  kOrderStream = 3,
  kDropoutStream = 4,
  kHeadStream = 5,
};

std::string join(const std::vector<std::string>& errors) {
  std::string out;
  for (const auto& e : errors) out += (out.empty() ? "" : "; ") + e;
  return out;
}

std::vector<int> shuffled_order(size_t n, uint64_t seed) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

void check_encoder(const ModelConfig& cfg, const TextEncoder& encoder) {
  std::vector<std::string> errors;
  if (encoder.mode() != cfg.pinyin_mode) {
    errors.push_back("encoder pinyin mode " + to_string(encoder.mode()) +
                     " differs from model mode " + to_string(cfg.pinyin_mode));
  }
  if (encoder.vocab().size() != cfg.char_vocab_size) {
    errors.push_back("character vocabulary size differs from the model's");
  }
  if (encoder.mode() != PinyinMode::None &&
      encoder.pinyin_vocab().table_sizes() != cfg.pinyin_table_sizes) {
    errors.push_back("pinyin vocabulary differs from the model's");
  }
  if (!errors.empty()) throw InvalidArgument(join(errors));
}

template <class T>
std::vector<T> gather_items(const std::vector<T>& items,
                            const std::vector<int>& order, size_t begin,
                            size_t end) {
  std::vector<T> out;
  out.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) out.push_back(items[order[i]]);
  return out;
}

}  // namespace

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (steps < 0) errors.push_back("steps must be non-negative");
  if (batch_size <= 0) errors.push_back("batch_size must be positive");
  if (!(lr > 0)) errors.push_back("lr must be positive");
  if (!(weight_decay >= 0)) errors.push_back("weight_decay must be >= 0");
  if (!(warmup_ratio >= 0 && warmup_ratio <= 1)) {
    errors.push_back("warmup_ratio must lie in [0, 1]");
  }
  return errors;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_ratio", warmup_ratio},
          {"seed", seed}};
}

std::string TrainRun::loss_curve_tsv() const {
  std::string out = "step\tloss\n";
  char buf[64];
  for (const auto& p : loss_curve) {
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\n",
                  static_cast<long long>(p.step), p.loss);
    out += buf;
  }
  return out;
}

nlohmann::json TrainRun::summary() const {
  nlohmann::json j = {{"model", model.to_json()},
                      {"masking", masking.to_json()},
                      {"train", train.to_json()},
                      {"seed", train.seed},
                      {"steps", loss_curve.size()},
                      {"wall_seconds", wall_seconds}};
  if (!loss_curve.empty()) {
    j["initial_loss"] = loss_curve.front().loss;
    j["final_loss"] = loss_curve.back().loss;
  }
  return j;
}

ModelConfig complete_config(ModelConfig cfg, const TextEncoder& encoder) {
  cfg.char_vocab_size = encoder.vocab().size();
  cfg.pinyin_mode = encoder.mode();
  cfg.pinyin_table_sizes = encoder.mode() == PinyinMode::None
                               ? std::vector<int32_t>{}
                               : encoder.pinyin_vocab().table_sizes();
  return cfg;
}

TrainRun pretrain(const std::vector<std::string>& corpus,
                  const TextEncoder& encoder,
                  const PretrainConfusionSet& confusion, ModelConfig mcfg,
                  const MaskingConfig& kcfg, const TrainConfig& tcfg) {
  mcfg = complete_config(std::move(mcfg), encoder);
  std::vector<std::string> errors = mcfg.validate();
  for (auto& e : kcfg.validate()) errors.push_back(std::move(e));
  for (auto& e : tcfg.validate()) errors.push_back(std::move(e));
  if (mcfg.scheme != kcfg.scheme) {
    errors.push_back("model scheme " + to_string(mcfg.scheme) +
                     " differs from masking scheme " + to_string(kcfg.scheme));
  }
  if (!errors.empty()) throw InvalidArgument(join(errors));

  std::vector<TokenSequence> seqs;
  for (const auto& line : corpus) {
    if (!line.empty()) seqs.push_back(encoder.encode(line, mcfg.max_len));
  }
  if (seqs.empty() && tcfg.steps > 0) {
    throw InvalidArgument("pretraining corpus is empty");
  }

  TrainRun run{mcfg, kcfg, tcfg, {}, 0, {}};
  const auto start = std::chrono::steady_clock::now();
  Rng init(derive_seed(tcfg.seed, {kInitStream}));
  auto params = ModelParams<float>::initialize(mcfg, init);
  auto grads = ModelParams<float>::zeros(mcfg);
  AdamWConfig ocfg;
  ocfg.lr = tcfg.lr;
  ocfg.weight_decay = tcfg.weight_decay;
  ocfg.warmup_ratio = tcfg.warmup_ratio;
  ocfg.total_steps = std::max<int64_t>(tcfg.steps, 1);
  AdamW<float> opt(ocfg, params.refs());
  Rng dropout(derive_seed(tcfg.seed, {kDropoutStream}));
  const auto param_refs = params.refs();
  const auto grad_refs = grads.refs();

  int64_t step = 0;
  for (uint64_t epoch = 0; step < tcfg.steps; ++epoch) {
    const auto masked =
        remask_epoch(seqs, kcfg, encoder, confusion,
                     derive_seed(tcfg.seed, {kMaskStream}), epoch);
    const auto order =
        shuffled_order(masked.size(), derive_seed(tcfg.seed, {kOrderStream, epoch}));
    const size_t bs = static_cast<size_t>(tcfg.batch_size);
    for (size_t b = 0; b < masked.size() && step < tcfg.steps; b += bs) {
      const auto chunk =
          gather_items(masked, order, b, std::min(b + bs, masked.size()));
      const Batch batch = Batch::pack(chunk);
      grads.set_zero();
      ++step;
      LossBreakdown loss;
      try {
        loss = mlm_step(batch, params, mcfg, true, &dropout, &grads);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      opt.step(param_refs, grad_refs);
      run.loss_curve.push_back({step, loss.total});
    }
  }
  run.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();

  nlohmann::json meta = {
      {"kind", "pretrain"},
      {"char_vocab", encoder.vocab().serialize()},
      {"masking", kcfg.to_json()},
      {"train", tcfg.to_json()},
      {"steps", step}};
  if (encoder.mode() != PinyinMode::None) {
    meta["pinyin_vocab"] = encoder.pinyin_vocab().to_json();
  }
  run.checkpoint = make_model_checkpoint(mcfg, params, meta);
  return run;
}

EncoderBundle::EncoderBundle(CharVocab vocab, PinyinDict dict,
                             PinyinMode mode, PinyinVocab pinyin_vocab)
    : vocab_(std::make_shared<CharVocab>(std::move(vocab))),
      dict_(std::make_shared<PinyinDict>(std::move(dict))),
      encoder_(std::make_shared<TextEncoder>(*vocab_, *dict_, mode,
                                             std::move(pinyin_vocab))) {}

EncoderBundle EncoderBundle::from_checkpoint(const Checkpoint& ckpt,
                                             PinyinDict dict) {
  const ModelConfig cfg = checkpoint_config(ckpt);
  try {
    CharVocab vocab =
        CharVocab::parse(ckpt.meta.at("char_vocab").get<std::string>());
    PinyinVocab pv;
    if (cfg.pinyin_mode != PinyinMode::None) {
      pv = PinyinVocab::from_json(ckpt.meta.at("pinyin_vocab"));
    }
    return EncoderBundle(std::move(vocab), std::move(dict), cfg.pinyin_mode,
                         std::move(pv));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint lacks vocabularies: ") + e.what());
  }
}

std::vector<std::string> FinetuneConfig::validate() const {
  std::vector<std::string> errors;
  if (epochs < 0) errors.push_back("finetune epochs must be non-negative");
  if (batch_size <= 0) errors.push_back("finetune batch_size must be positive");
  if (!(lr > 0)) errors.push_back("finetune lr must be positive");
  if (!(weight_decay >= 0)) {
    errors.push_back("finetune weight_decay must be >= 0");
  }
  if (!(warmup_ratio >= 0 && warmup_ratio <= 1)) {
    errors.push_back("finetune warmup_ratio must lie in [0, 1]");
  }
  return errors;
}

nlohmann::json FinetuneConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size},
          {"lr", lr},                 {"weight_decay", weight_decay},
          {"warmup_ratio", warmup_ratio}, {"seed", seed}};
}

Checkpoint TaskModel::to_checkpoint(const nlohmann::json& extra) {
  nlohmann::json m = meta;
  m["kind"] = "finetune";
  m["task"] = to_string(task);
  m["labels"] = labels;
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) m[k] = v;
  }
  Checkpoint ckpt = make_model_checkpoint(config, params, m);
  ckpt.tensors.emplace_back("task.head.weight", head_w);
  ckpt.tensors.emplace_back("task.head.bias", head_b);
  return ckpt;
}

TaskModel TaskModel::from_checkpoint(const Checkpoint& ckpt) {
  TaskModel m;
  m.config = checkpoint_config(ckpt);
  m.params = params_from_checkpoint<float>(ckpt, m.config);
  try {
    m.task = parse_task(ckpt.meta.at("task").get<std::string>());
    m.labels = ckpt.meta.at("labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("not a fine-tuned checkpoint: ") + e.what());
  }
  const Matrix<float>* w = ckpt.find("task.head.weight");
  const Matrix<float>* b = ckpt.find("task.head.bias");
  const auto n = static_cast<Eigen::Index>(m.labels.size());
  if (w == nullptr || b == nullptr || w->rows() != m.config.hidden ||
      w->cols() != n || b->rows() != 1 || b->cols() != n) {
    throw ParseError("fine-tuned checkpoint has a malformed task head");
  }
  m.head_w = *w;
  m.head_b = *b;
  m.meta = ckpt.meta;
  return m;
}

namespace {

struct EncodedExample {
  TokenSequence seq;
  std::vector<int32_t> row_labels;  // Tag: per row, kIgnore at specials
  int32_t label = kIgnore;          // Classify
};

EncodedExample encode_example(const LabeledExample& ex, const TaskModel& m,
                              const TextEncoder& encoder, bool with_labels) {
  EncodedExample out;
  out.seq = encoder.encode(std::string_view(ex.text), m.config.max_len);
  if (!with_labels) return out;
  const auto index = [&](const std::string& label) {
    auto it = std::lower_bound(m.labels.begin(), m.labels.end(), label);
    if (it == m.labels.end() || *it != label) {
      throw DataError("label '" + label + "' outside the label inventory");
    }
    return static_cast<int32_t>(it - m.labels.begin());
  };
  if (m.task == Task::Classify) {
    out.label = index(ex.label);
  } else {
    out.row_labels.assign(out.seq.length(), kIgnore);
    for (int r = 1; r + 1 < out.seq.length(); ++r) {
      out.row_labels[r] = index(ex.tags.at(static_cast<size_t>(r - 1)));
    }
  }
  return out;
}

// Rows supervised by the task head and their labels.
void task_rows(const Batch& batch, const std::vector<EncodedExample>& items,
               Task task, std::vector<int>& rows,
               std::vector<int32_t>& labels) {
  for (int s = 0; s < batch.sequences(); ++s) {
    const int o = batch.offsets[s];
    if (task == Task::Classify) {
      rows.push_back(o);
      labels.push_back(items[s].label);
      continue;
    }
    for (int r = 0; r < items[s].seq.length(); ++r) {
      if (items[s].row_labels[r] == kIgnore) continue;
      rows.push_back(o + r);
      labels.push_back(items[s].row_labels[r]);
    }
  }
}

Batch pack_items(const std::vector<EncodedExample>& items) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(items.size());
  for (const auto& it : items) seqs.push_back(it.seq);
  return Batch::pack(seqs);
}

}  // namespace

TaskModel finetune(const Checkpoint& pretrained, const LabeledDataset& ds,
                   const TextEncoder& encoder, const FinetuneConfig& fcfg) {
  const auto errors = fcfg.validate();
  if (!errors.empty()) throw InvalidArgument(join(errors));
  ds.validate();
  TaskModel m;
  m.config = checkpoint_config(pretrained);
  check_encoder(m.config, encoder);
  m.task = ds.task;
  m.labels = ds.labels;
  m.params = params_from_checkpoint<float>(pretrained, m.config);
  m.meta = pretrained.meta;
  m.meta.erase("config");
  Rng head_rng(derive_seed(fcfg.seed, {kHeadStream}));
  const auto n_labels = static_cast<Eigen::Index>(m.labels.size());
  m.head_w.resize(m.config.hidden, n_labels);
  for (Eigen::Index i = 0; i < m.head_w.size(); ++i) {
    m.head_w.data()[i] = static_cast<float>(head_rng.truncated_normal(0.02));
  }
  m.head_b = Matrix<float>::Zero(1, n_labels);

  std::vector<EncodedExample> items;
  items.reserve(ds.size());
  for (const auto& ex : ds.examples) {
    items.push_back(encode_example(ex, m, encoder, true));
  }
  const size_t bs = static_cast<size_t>(fcfg.batch_size);
  const int64_t batches_per_epoch =
      static_cast<int64_t>((items.size() + bs - 1) / bs);

  auto grads = ModelParams<float>::zeros(m.config);
  Matrix<float> gw(m.head_w.rows(), m.head_w.cols());
  Matrix<float> gb(1, n_labels);
  auto param_refs = m.params.refs();
  param_refs.push_back({"task.head.weight", &m.head_w, true});
  param_refs.push_back({"task.head.bias", &m.head_b, false});
  auto grad_refs = grads.refs();
  grad_refs.push_back({"task.head.weight", &gw, true});
  grad_refs.push_back({"task.head.bias", &gb, false});

  AdamWConfig ocfg;
  ocfg.lr = fcfg.lr;
  ocfg.weight_decay = fcfg.weight_decay;
  ocfg.warmup_ratio = fcfg.warmup_ratio;
  ocfg.total_steps = std::max<int64_t>(fcfg.epochs * batches_per_epoch, 1);
  AdamW<float> opt(ocfg, param_refs);
  Rng dropout(derive_seed(fcfg.seed, {kDropoutStream}));

  for (int epoch = 0; epoch < fcfg.epochs; ++epoch) {
    const auto order = shuffled_order(
        items.size(),
        derive_seed(fcfg.seed, {kOrderStream, static_cast<uint64_t>(epoch)}));
    for (size_t b = 0; b < items.size(); b += bs) {
      const auto chunk =
          gather_items(items, order, b, std::min(b + bs, items.size()));
      const Batch batch = pack_items(chunk);
      std::vector<int> rows;
      std::vector<int32_t> labels;
      task_rows(batch, chunk, m.task, rows, labels);
      grads.set_zero();
      gw.setZero();
      gb.setZero();
      if (!rows.empty()) {
        const auto cache = encoder_forward(embed(batch, m.params, m.config),
                                           batch, m.params, m.config, true,
                                           &dropout);
        const std::vector<double> weights(rows.size(), 1.0 / rows.size());
        Matrix<float> d_hidden =
            Matrix<float>::Zero(cache.output.rows(), cache.output.cols());
        const double loss =
            affine_cross_entropy(cache.output, rows, labels, weights, m.head_w,
                                 m.head_b, &d_hidden, &gw, &gb);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite fine-tuning loss in epoch " +
                             std::to_string(epoch));
        }
        encoder_backward(batch, cache, d_hidden, m.params, m.config, grads);
      }
      opt.step(param_refs, grad_refs);
    }
  }
  return m;
}

std::vector<std::vector<int>> predict(const TaskModel& model,
                                      const LabeledDataset& ds,
                                      const TextEncoder& encoder) {
  check_encoder(model.config, encoder);
  if (ds.task != model.task) {
    throw InvalidArgument("dataset task " + to_string(ds.task) +
                          " differs from model task " + to_string(model.task));
  }
  int outside = 0;
  auto it = std::lower_bound(model.labels.begin(), model.labels.end(), "O");
  if (it != model.labels.end() && *it == "O") {
    outside = static_cast<int>(it - model.labels.begin());
  }
  constexpr size_t kChunk = 64;
  std::vector<std::vector<int>> out;
  out.reserve(ds.size());
  for (size_t b = 0; b < ds.size(); b += kChunk) {
    std::vector<EncodedExample> chunk;
    for (size_t i = b; i < std::min(b + kChunk, ds.size()); ++i) {
      chunk.push_back(encode_example(ds.examples[i], model, encoder, false));
    }
    const Batch batch = pack_items(chunk);
    const auto cache =
        encoder_forward(embed(batch, model.params, model.config), batch,
                        model.params, model.config, false, nullptr);
    for (int s = 0; s < batch.sequences(); ++s) {
      const int o = batch.offsets[s];
      const int len = batch.offsets[s + 1] - o;
      std::vector<int> rows;
      if (model.task == Task::Classify) {
        rows.push_back(o);
      } else {
        for (int r = 1; r + 1 < len; ++r) rows.push_back(o + r);
      }
      const Matrix<float> logits =
          affine_logits(cache.output, rows, model.head_w, model.head_b);
      std::vector<int> pred;
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index arg;
        logits.row(r).maxCoeff(&arg);
        pred.push_back(static_cast<int>(arg));
      }
      if (model.task == Task::Tag) {
        // Characters cut off by truncation are predicted outside.
        const size_t chars = utf8_decode(ds.examples[b + s].text).size();
        pred.resize(chars, outside);
      }
      out.push_back(std::move(pred));
    }
  }
  return out;
}

double evaluate_f1(const TaskModel& model, const LabeledDataset& ds,
                   const TextEncoder& encoder) {
  if (ds.examples.empty()) {
    throw UndefinedMetricError("F1 of an empty dataset");
  }
  const auto pred = predict(model, ds, encoder);
  if (model.task == Task::Classify) {
    std::vector<int> gold, flat;
    for (size_t i = 0; i < ds.size(); ++i) {
      auto it = std::lower_bound(model.labels.begin(), model.labels.end(),
                                 ds.examples[i].label);
      // Unknown gold labels can never be predicted; give them a fresh id.
      gold.push_back(it != model.labels.end() && *it == ds.examples[i].label
                         ? static_cast<int>(it - model.labels.begin())
                         : static_cast<int>(model.labels.size()));
      flat.push_back(pred[i].at(0));
    }
    return macro_f1(gold, flat);
  }
  std::vector<std::vector<std::string>> gold, tags;
  for (size_t i = 0; i < ds.size(); ++i) {
    gold.push_back(ds.examples[i].tags);
    auto& t = tags.emplace_back();
    for (int p : pred[i]) t.push_back(model.labels[p]);
  }
  return entity_f1(gold, tags);
}

}  // namespace pymlm
