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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <sstream>

#include "pymlm/checkpoint.h"
#include "pymlm/dataset.h"
#include "pymlm/metrics.h"
#include "pymlm/report.h"
#include "pymlm/train.h"
#include "test_support.h"

using namespace pymlm;
using pymlm::testing::tiny_corpus;
using pymlm::testing::tiny_dict;

namespace {

EvalConfusionSet bo_pairs() {
  return build_eval_confusion_set(std::vector<std::string>{"拨\t播"},
                                  tiny_dict());
}

LabeledDataset classify(std::vector<std::pair<std::string, std::string>> rows) {
  std::string jsonl;
  for (const auto& [text, label] : rows) {
    jsonl += nlohmann::json{{"text", text}, {"label", label}}.dump() + "\n";
  }
  return parse_dataset(jsonl);
}

int count_of(const std::string& text, char32_t ch) {
  const std::u32string u = utf8_decode(text);
  return static_cast<int>(std::count(u.begin(), u.end(), ch));
}

// A small encoder over the tiny corpus.
struct Setup {
  EncoderBundle bundle{build_char_vocab(tiny_corpus(), 1), tiny_dict(),
                       PinyinMode::InitFinalTone,
                       build_pinyin_vocab(tiny_dict(), PinyinMode::InitFinalTone)};
  PretrainConfusionSet cs = build_confusion_set(bundle.vocab(), bundle.dict());

  static ModelConfig model() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.hidden = 8;
    cfg.ffn = 16;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    return cfg;
  }

  TrainRun run(int64_t steps, const std::vector<std::string>& corpus) const {
    TrainConfig t;
    t.steps = steps;
    t.batch_size = 4;
    t.seed = 5;
    return pretrain(corpus, bundle.encoder(), cs, model(), MaskingConfig{}, t);
  }
};

}  // namespace

TEST_CASE("datasets infer their task and round trip") {
  const LabeledDataset c = parse_dataset(
      "{\"text\":\"拨打\",\"label\":\"b\"}\n{\"text\":\"中\",\"label\":\"a\"}\n");
  CHECK(c.task == Task::Classify);
  CHECK(c.labels == std::vector<std::string>{"a", "b"});
  CHECK(parse_dataset(serialize_dataset(c)) == c);

  const LabeledDataset t = parse_dataset(
      "{\"text\":\"拨打电\",\"tags\":[\"B-X\",\"I-X\",\"O\"]}\n");
  CHECK(t.task == Task::Tag);
  CHECK(t.labels == std::vector<std::string>{"B-X", "I-X", "O"});
  CHECK(parse_dataset(serialize_dataset(t)) == t);

  CHECK_THROWS_AS(parse_dataset("{\"text\":\"拨\",\"label\":\"a\"}\n"
                                "{\"text\":\"拨\",\"tags\":[\"O\"]}\n"),
                  DataError);
  CHECK_THROWS_AS(parse_dataset("{\"text\":\"拨打\",\"tags\":[\"O\"]}\n"),
                  DataError);
  CHECK_THROWS_AS(parse_dataset("{\"text\":\"拨\",\"label\":\"z\"}\n", {"a"}),
                  DataError);
  CHECK_THROWS_AS(parse_dataset("{not json}\n"), ParseError);
}

TEST_CASE("noise at rate zero leaves the data untouched") {
  const LabeledDataset ds = classify({{"拨打电话", "a"}, {"拨拨", "b"}});
  Rng rng(1);
  const NoisyDataset n = inject_noise(ds, 0.0, bo_pairs(), rng);
  CHECK(n.data == ds);
  CHECK(n.stats.substitutions == 0);
  CHECK(n.stats.replaceable == 3);
  CHECK_THROWS_AS(inject_noise(ds, 1.5, bo_pairs(), rng), InvalidArgument);
}

TEST_CASE("noise substitutes the rounded share of replaceable characters") {
  const LabeledDataset ds = classify({{"拨拨拨拨拨拨拨拨拨拨", "a"}});
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const NoisyDataset n = inject_noise(ds, 0.2, bo_pairs(), rng);
    CHECK(n.stats.substitutions == 2);
    CHECK(count_of(n.data.examples[0].text, U'播') == 2);
    CHECK(n.data.examples[0].label == "a");
  }
}

TEST_CASE("a single replaceable character follows its observed pair") {
  const LabeledDataset ds = classify({{"拨打电话", "a"}, {"打电话", "b"}});
  Rng rng(3);
  // 0.5 of one replaceable position rounds up to one substitution.
  const NoisyDataset n = inject_noise(ds, 0.5, bo_pairs(), rng);
  CHECK(n.data.examples[0].text == "播打电话");
  CHECK(n.data.examples[1].text == "打电话");
  CHECK(n.stats.unreplaceable_examples == 1);
}

TEST_CASE("macro F1 by hand") {
  // Each label: TP 1, FP 1, FN 1, so F1 = 2 / 4.
  CHECK(macro_f1({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK(macro_f1({0, 1}, {0, 1}) == 1.0);
  // Label 2 appears only in predictions and scores 0.
  CHECK(macro_f1({0, 0}, {0, 2}) == doctest::Approx((2.0 / 3 + 0) / 2));
  CHECK_THROWS_AS(macro_f1({}, {}), UndefinedMetricError);
}

TEST_CASE("entity F1 requires exact spans") {
  using Tags = std::vector<std::string>;
  CHECK(entity_f1({Tags{"B-T", "I-T", "O"}}, {Tags{"O", "O", "O"}}) == 0.0);
  CHECK(entity_f1({Tags{"B-T", "I-T", "O"}}, {Tags{"B-T", "O", "O"}}) == 0.0);
  CHECK(entity_f1({Tags{"B-T", "I-T", "O"}}, {Tags{"B-T", "I-T", "O"}}) == 1.0);
  // One of two gold spans found, no false positives: 2 * 1 / (2 + 1).
  CHECK(entity_f1({Tags{"B-T", "O", "B-U"}}, {Tags{"B-T", "O", "O"}}) ==
        doctest::Approx(2.0 / 3));
  CHECK(entity_f1({Tags{"O"}}, {Tags{"O"}}) == 1.0);
  // A stray I- opens a span.
  CHECK(bio_spans({"O", "I-T", "I-T", "B-T"}) ==
        std::vector<Span>{{1, 3, "T"}, {3, 4, "T"}});
  CHECK_THROWS_AS(bio_spans({"X-T"}), DataError);
}

TEST_CASE("zero pretraining steps yield the seeded initialisation") {
  const Setup s;
  const TrainRun a = s.run(0, tiny_corpus());
  const TrainRun b = s.run(0, {"安安安"});
  CHECK(a.loss_curve.empty());
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  const TrainRun c = s.run(2, tiny_corpus());
  CHECK(c.loss_curve.size() == 2);
  CHECK(c.checkpoint.tensors != a.checkpoint.tensors);
  CHECK(c.loss_curve_tsv().rfind("step\tloss\n1\t", 0) == 0);
}

TEST_CASE("pretraining rejects inconsistent configuration") {
  const Setup s;
  ModelConfig m = Setup::model();
  m.scheme = Scheme::ConfusionOnly;
  TrainConfig t;
  t.steps = -1;
  CHECK_THROWS_AS(pretrain(tiny_corpus(), s.bundle.encoder(), s.cs, m,
                           MaskingConfig{}, t),
                  InvalidArgument);
}

TEST_CASE("zero fine-tuning epochs keep the encoder") {
  const Setup s;
  const TrainRun pre = s.run(2, tiny_corpus());
  const LabeledDataset ds = classify({{"拨拨", "a"}, {"中中", "b"}});
  FinetuneConfig f;
  f.epochs = 0;
  TaskModel m = finetune(pre.checkpoint, ds, s.bundle.encoder(), f);
  const auto original =
      params_from_checkpoint<float>(pre.checkpoint, m.config);
  auto a = m.params;
  auto b = original;
  const auto ra = a.refs();
  const auto rb = b.refs();
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].value == *rb[i].value);
  CHECK(m.head_w.rows() * m.head_w.cols() == 8 * 2);
}

TEST_CASE("fine-tuning separates two easy classes") {
  const Setup s;
  const TrainRun pre = s.run(0, tiny_corpus());
  const LabeledDataset ds = classify({{"拨拨拨", "bo"}, {"播拨波", "bo"},
                                      {"波拨", "bo"}, {"中钟中", "zh"},
                                      {"钟种", "zh"}, {"中中", "zh"}});
  FinetuneConfig f;
  f.epochs = 60;
  f.batch_size = 2;
  f.lr = 1e-2;
  f.seed = 2;
  const TaskModel m = finetune(pre.checkpoint, ds, s.bundle.encoder(), f);
  const auto pred = predict(m, ds, s.bundle.encoder());
  int correct = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    correct += pred[i][0] == ds.label_index(ds.examples[i].label);
  }
  CHECK(correct == static_cast<int>(ds.size()));
  CHECK(evaluate_f1(m, ds, s.bundle.encoder()) == 1.0);

  // The fine-tuned model survives a checkpoint round trip.
  TaskModel copy = m;
  const TaskModel back =
      TaskModel::from_checkpoint(parse_checkpoint(serialize_checkpoint(copy.to_checkpoint())));
  CHECK(predict(back, ds, s.bundle.encoder()) == pred);
}

TEST_CASE("tagging predicts one tag per character, past truncation too") {
  const Setup s;
  const TrainRun pre = s.run(0, tiny_corpus());
  const LabeledDataset ds = parse_dataset(
      "{\"text\":\"拨打电话中的钟就\",\"tags\":[\"B-X\",\"I-X\",\"O\",\"O\","
      "\"O\",\"O\",\"O\",\"B-X\"]}\n");
  FinetuneConfig f;
  f.epochs = 1;
  const TaskModel m = finetune(pre.checkpoint, ds, s.bundle.encoder(), f);
  const auto pred = predict(m, ds, s.bundle.encoder());
  REQUIRE(pred.size() == 1);
  REQUIRE(pred[0].size() == 8);
  // max_len 8 leaves room for six characters.
  CHECK(pred[0][6] == ds.label_index("O"));
  CHECK(pred[0][7] == ds.label_index("O"));
}

TEST_CASE("report has one row per variant and rate") {
  const Setup s;
  const TrainRun pre = s.run(0, tiny_corpus());
  const LabeledDataset train = classify({{"拨拨", "a"}, {"中中", "b"}});
  const LabeledDataset test = classify({{"拨打", "a"}, {"中的", "b"}});
  ReportConfig rc;
  rc.rates = {0.0, 0.5, 1.0};
  rc.seeds = {1, 2};
  rc.finetune.epochs = 1;
  const std::vector<ReportVariant> variants = {
      {"x", &pre.checkpoint, &s.bundle.encoder()},
      {"y", &pre.checkpoint, &s.bundle.encoder()}};
  const RobustnessReport r =
      robustness_report(variants, train, test, bo_pairs(), rc);
  CHECK(r.rows.size() == 6);
  for (const auto& row : r.rows) CHECK(row.seed_f1.size() == 2);
  REQUIRE(r.find("y", 0.5) != nullptr);
  CHECK(r.find("z", 0.5) == nullptr);
  // Same checkpoint, same seeds: identical scores.
  CHECK(r.find("x", 0.5)->f1 == r.find("y", 0.5)->f1);
  std::istringstream tsv(r.to_tsv());
  std::string line;
  std::getline(tsv, line);
  CHECK(line == "variant\trate\tf1");
  int rows = 0;
  while (std::getline(tsv, line)) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("embedding export writes one row per known character") {
  const Setup s;
  const TrainRun pre = s.run(0, tiny_corpus());
  std::vector<std::string> warnings;
  const std::string table =
      export_embeddings(pre.checkpoint, s.bundle.encoder(), U"九就X", &warnings);
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  CHECK(line == "char\tpinyin\tvector");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].rfind("九\tjiu\t", 0) == 0);
  CHECK(rows[1].rfind("就\tjiu\t", 0) == 0);
  const std::string vec = rows[0].substr(rows[0].rfind('\t') + 1);
  CHECK(std::count(vec.begin(), vec.end(), ',') == Setup::model().hidden - 1);
  CHECK(warnings.size() == 1);
  CHECK(export_embeddings(pre.checkpoint, s.bundle.encoder(), U"") ==
        "char\tpinyin\tvector\n");
}
