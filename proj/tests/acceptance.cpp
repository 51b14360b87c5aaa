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

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Tolerances are fixed below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pymlm/checkpoint.h"
#include "pymlm/confusion.h"
#include "pymlm/masking.h"
#include "pymlm/model.h"
#include "pymlm/pinyin.h"
#include "pymlm/report.h"
#include "pymlm/synthetic.h"
#include "pymlm/train.h"

using namespace pymlm;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kFiniteDiffEps = 1e-4;
constexpr int kMaskingDraws = 100000;
constexpr double kBranchTolerance = 0.01;
constexpr double kWeightSumTolerance = 1e-9;
constexpr int kChiSquareDraws = 100000;
constexpr double kChiSquareAlpha = 1e-3;
constexpr int64_t kPretrainSteps = 5000;
constexpr int kProbeMinPositions = 1000;
constexpr double kParityPoints = 0.02;
constexpr std::array<uint64_t, 3> kSeeds = {1, 2, 3};

std::string source_path(const std::string& rel) {
  return std::string(PYMLM_SOURCE_DIR) + "/" + rel;
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shared synthetic world: the shipped generator config and dictionary.
struct World {
  PinyinDict dict;
  SyntheticData data;
  CharVocab vocab;
  PretrainConfusionSet pretrain_cs;
  EvalConfusionSet eval_cs;
  std::unique_ptr<EncoderBundle> po;
  std::unique_ptr<EncoderBundle> base;

  World() {
    dict = load_dictionary(source_path("data/pinyin_dict.tsv"));
    const auto cfg = SyntheticConfig::from_json(
        nlohmann::json::parse(read_file(source_path("data/synthetic_config.json"))));
    data = generate_synthetic(dict, cfg);
    vocab = build_char_vocab(data.corpus, 1);
    pretrain_cs = build_confusion_set(vocab, dict);
    eval_cs = build_eval_confusion_set(data.eval_pairs, dict);
    po = std::make_unique<EncoderBundle>(
        vocab, dict, PinyinMode::InitFinalTone,
        build_pinyin_vocab(dict, PinyinMode::InitFinalTone));
    base = std::make_unique<EncoderBundle>(vocab, dict, PinyinMode::None,
                                           PinyinVocab());
  }
};

World& world() {
  static World w;
  return w;
}

ModelConfig model_config(Scheme scheme) {
  ModelConfig cfg;
  cfg.max_len = 32;
  cfg.scheme = scheme;
  return cfg;
}

MaskingConfig parallel_out_masking() { return MaskingConfig(); }

MaskingConfig baseline_masking() {
  MaskingConfig k;
  k.scheme = Scheme::ConfusionOnly;
  k.replace_source = ReplaceSource::RandomVocab;
  return k;
}

TrainRun pretrain_variant(bool parallel_out, int64_t steps, uint64_t seed) {
  World& w = world();
  TrainConfig t;
  t.steps = steps;
  t.seed = seed;
  return parallel_out
             ? pretrain(w.data.corpus, w.po->encoder(), w.pretrain_cs,
                        model_config(Scheme::ParallelOut),
                        parallel_out_masking(), t)
             : pretrain(w.data.corpus, w.base->encoder(), w.pretrain_cs,
                        model_config(Scheme::ConfusionOnly), baseline_masking(),
                        t);
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const PinyinDict dict = parse_dictionary(
      "拨\tbo1\n播\tbo1\n打\tda3\n电\tdian4\n话\thua4\n中\tzhong1\n钟\tzhong1\n"
      "安\tan1\n的\tde5\n");
  const CharVocab vocab = build_char_vocab({"拨打电话的", "播中钟安", "话"}, 1);
  const PinyinVocab pv = build_pinyin_vocab(dict, PinyinMode::InitFinalTone);
  const TextEncoder enc(vocab, dict, PinyinMode::InitFinalTone, pv);
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 8;
  cfg.ffn = 16;
  cfg.max_len = 12;
  cfg = complete_config(cfg, enc);

  Rng init(5);
  auto params = ModelParams<double>::initialize(cfg, init);
  Rng jitter(6);
  for (auto& ref : params.refs()) {
    for (Eigen::Index i = 0; i < ref.value->size(); ++i) {
      ref.value->data()[i] += 0.3 * jitter.normal();
    }
  }
  const std::vector<int> pa = {1, 3}, pb = {2}, pc = {1, 2};
  std::vector<MaskedInstance> inst = {
      mask_positions(enc.encode("拨打电话的", 12), pa, Branch::TogetherMask),
      mask_positions(pad_to(enc.encode("中钟", 12), 7), pb, Branch::TokenMask),
      mask_positions(enc.encode("播安话", 12), pc, Branch::PinyinMask)};
  const Batch batch = Batch::pack(inst);

  auto grads = ModelParams<double>::zeros(cfg);
  {
    Rng rng(9);
    mlm_step(batch, params, cfg, true, &rng, &grads);
  }
  const auto loss_at = [&]() {
    Rng rng(9);
    return mlm_step<double>(batch, params, cfg, true, &rng, nullptr).total;
  };
  double worst = 0;
  std::string worst_name;
  auto prefs = params.refs();
  auto grefs = grads.refs();
  for (size_t t = 0; t < prefs.size(); ++t) {
    Matrix<double>& w = *prefs[t].value;
    Matrix<double> numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + kFiniteDiffEps;
      const double up = loss_at();
      w.data()[i] = saved - kFiniteDiffEps;
      const double down = loss_at();
      w.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * kFiniteDiffEps);
    }
    const Matrix<double>& analytic = *grefs[t].value;
    const double scale = std::max(analytic.cwiseAbs().maxCoeff(),
                                  numeric.cwiseAbs().maxCoeff());
    const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
    const double rel = scale > 1e-12 ? diff / scale : diff;
    if (rel >= worst) {
      worst = rel;
      worst_name = prefs[t].name;
    }
  }
  return {worst < kGradTolerance,
          std::to_string(prefs.size()) + " tensors, max rel err " +
              fmt("%.2e", worst) + " (" + worst_name + ") < " +
              fmt("%.0e", kGradTolerance)};
}

Outcome masking_distribution() {
  World& w = world();
  const MaskingConfig cfg;  // defaults
  std::map<Branch, long> counts;
  long candidates = 0, downgraded = 0;
  for (uint64_t i = 0; candidates < kMaskingDraws; ++i) {
    const auto& text = w.data.corpus[i % w.data.corpus.size()];
    const TokenSequence seq = w.po->encoder().encode(text, 32);
    Rng rng(derive_seed(77, {i}));
    const MaskedInstance m =
        apply_masking(seq, cfg, w.po->encoder(), w.pretrain_cs, rng);
    downgraded += m.downgraded;
    for (Branch b : m.branches) {
      if (b == Branch::NotCandidate) continue;
      ++counts[b];
      ++candidates;
    }
  }
  const std::vector<std::pair<Branch, double>> expected = {
      {Branch::TogetherMask, 0.64},
      {Branch::TokenMask, 0.08},
      {Branch::PinyinMask, 0.08},
      {Branch::ConfusionReplace, 0.10},
      {Branch::Unchanged, 0.10}};
  bool ok = true;
  std::string detail = std::to_string(candidates) + " candidates:";
  for (const auto& [b, p] : expected) {
    const double f = static_cast<double>(counts[b]) / candidates;
    ok = ok && std::abs(f - p) <= kBranchTolerance;
    detail += " " + std::string(to_string(b)) + "=" + fmt("%.4f", f);
  }
  detail += " (tol " + fmt("%.2f", kBranchTolerance) +
            ", downgraded " + std::to_string(downgraded) + ")";
  return {ok, detail};
}

// Survival function of chi-square with one degree of freedom.
double chi2_sf_1(double x) { return std::erfc(std::sqrt(x / 2)); }

Outcome confusion_algebra() {
  World& w = world();
  // (a) class weights.
  double worst_sum = 0;
  for (const auto& [key, members] : w.pretrain_cs.classes()) {
    double s = 0;
    for (const auto& m : members) s += m.weight;
    worst_sum = std::max(worst_sum, std::abs(s - 1));
  }
  // (b) sampled replacements keep the toneless pinyin.
  long sampled = 0, mismatched = 0;
  Rng rng(31);
  for (const auto& [key, members] : w.pretrain_cs.classes()) {
    for (const auto& m : members) {
      for (int k = 0; k < 20; ++k) {
        const char32_t r = sample_confusable(w.pretrain_cs, m.ch,
                                             SamplingStrategy::Frequency, rng);
        ++sampled;
        const Syllable* a = w.dict.find(m.ch);
        const Syllable* b = w.dict.find(r);
        if (a == nullptr || b == nullptr || a->text != b->text) ++mismatched;
      }
    }
  }
  // (c) frequency vs uniform on a three-member class.
  const PretrainConfusionSet three(
      {{"bo", {{U'拨', 0.6}, {U'播', 0.3}, {U'波', 0.1}}}});
  long freq[2] = {0, 0}, unif[2] = {0, 0};
  Rng fr(41), ur(43);
  for (int i = 0; i < kChiSquareDraws; ++i) {
    ++freq[sample_confusable(three, U'拨', SamplingStrategy::Frequency, fr) ==
                   U'播'
               ? 0
               : 1];
    ++unif[sample_confusable(three, U'拨', SamplingStrategy::Uniform, ur) ==
                   U'播'
               ? 0
               : 1];
  }
  // 2x2 contingency table, strategy x outcome.
  const double n = 2.0 * kChiSquareDraws;
  double chi2 = 0;
  for (int c = 0; c < 2; ++c) {
    const double col = static_cast<double>(freq[c] + unif[c]);
    for (const long* row : {freq, unif}) {
      const double e = kChiSquareDraws * col / n;
      chi2 += (row[c] - e) * (row[c] - e) / e;
    }
  }
  const double p = chi2_sf_1(chi2);
  const bool ok = worst_sum <= kWeightSumTolerance && mismatched == 0 &&
                  p < kChiSquareAlpha;
  return {ok, "max |sum-1| " + fmt("%.1e", worst_sum) + ", " +
                  std::to_string(mismatched) + "/" + std::to_string(sampled) +
                  " off-class samples, chi2 " + fmt("%.1f", chi2) + " p " +
                  fmt("%.1e", p) + " < " + fmt("%.0e", kChiSquareAlpha)};
}

Outcome decomposition_suite() {
  const PinyinDict dict = load_dictionary(source_path("data/pinyin_dict.tsv"));
  long failures = 0;
  for (const auto& [ch, s] : dict.entries()) {
    const auto [ini, fin] = decompose(s.text);
    const std::string joined = (ini == kZeroInitial ? "" : ini) + fin;
    const std::string toned = s.text + std::to_string(s.tone == 0 ? 5 : s.tone);
    if (ini != s.initial || fin != s.final || joined != s.text ||
        !(parse_syllable(toned) == s)) {
      ++failures;
    }
  }
  const Syllable* zhong = dict.find(U'中');
  const bool zhong_ok = zhong != nullptr && zhong->initial == "zh" &&
                        zhong->final == "ong" && zhong->tone == 1;
  return {failures == 0 && zhong_ok && dict.size() >= 2000,
          std::to_string(dict.size()) + " entries, " +
              std::to_string(failures) + " round-trip failures, 中 -> " +
              (zhong ? zhong->initial + "," + zhong->final + "," +
                           std::to_string(zhong->tone)
                     : std::string("missing"))};
}

Outcome determinism() {
  World& w = world();
  const auto a = pretrain_variant(true, 200, 11);
  const auto b = pretrain_variant(true, 200, 11);
  const bool ckpt_same = serialize_checkpoint(a.checkpoint) ==
                         serialize_checkpoint(b.checkpoint);
  const bool curve_same = a.loss_curve_tsv() == b.loss_curve_tsv();
  const auto c = pretrain_variant(false, 200, 11);

  ReportConfig rc;
  rc.rates = {0.0, 0.5};
  rc.seeds = {11};
  rc.finetune.epochs = 1;
  const std::vector<ReportVariant> variants = {
      {"parallel_out", &a.checkpoint, &w.po->encoder()},
      {"baseline", &c.checkpoint, &w.base->encoder()}};
  const auto r1 = robustness_report(variants, w.data.classify_train,
                                    w.data.classify_test, w.eval_cs, rc);
  const auto r2 = robustness_report(variants, w.data.classify_train,
                                    w.data.classify_test, w.eval_cs, rc);
  const bool report_same =
      r1.to_tsv() == r2.to_tsv() && r1.metadata.dump() == r2.metadata.dump();
  return {ckpt_same && curve_same && report_same,
          std::string("checkpoint ") + (ckpt_same ? "identical" : "DIFFERS") +
              ", loss curve " + (curve_same ? "identical" : "DIFFERS") +
              ", report " + (report_same ? "identical" : "DIFFERS")};
}

struct SeedResult {
  double po[3], base[3];  // F1 at rates 0, 0.2, 0.5
  ProbeResult token, together;
  double po_loss_ratio, base_loss_ratio;
};

double loss_ratio(const TrainRun& run) {
  // Mean of the last 50 steps over the mean of the first 50.
  const auto& c = run.loss_curve;
  const size_t n = std::min<size_t>(50, c.size());
  double first = 0, last = 0;
  for (size_t i = 0; i < n; ++i) {
    first += c[i].loss;
    last += c[c.size() - 1 - i].loss;
  }
  return last / first;
}

std::vector<SeedResult>& experiment() {
  static std::vector<SeedResult> results = [] {
    World& w = world();
    std::vector<SeedResult> out;
    for (uint64_t seed : kSeeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const TrainRun po = pretrain_variant(true, kPretrainSteps, seed);
      const TrainRun base = pretrain_variant(false, kPretrainSteps, seed);
      ReportConfig rc;
      rc.rates = {0.0, 0.2, 0.5};
      rc.seeds = {seed};
      const auto report = robustness_report(
          {{"parallel_out", &po.checkpoint, &w.po->encoder()},
           {"baseline", &base.checkpoint, &w.base->encoder()}},
          w.data.classify_train, w.data.classify_test, w.eval_cs, rc);
      SeedResult r{};
      for (int i = 0; i < 3; ++i) {
        r.po[i] = report.find("parallel_out", rc.rates[i])->f1;
        r.base[i] = report.find("baseline", rc.rates[i])->f1;
      }
      const ModelConfig cfg = checkpoint_config(po.checkpoint);
      const auto params = params_from_checkpoint<float>(po.checkpoint, cfg);
      r.token = recovery_probe(params, cfg, w.po->encoder(), w.data.probe,
                               Branch::TokenMask, 0.15, seed);
      r.together = recovery_probe(params, cfg, w.po->encoder(), w.data.probe,
                                  Branch::TogetherMask, 0.15, seed);
      r.po_loss_ratio = loss_ratio(po);
      r.base_loss_ratio = loss_ratio(base);
      std::printf(
          "  seed %llu: F1 parallel_out %.4f/%.4f/%.4f baseline "
          "%.4f/%.4f/%.4f (rates 0/0.2/0.5); probe %.4f vs %.4f over %d; "
          "loss ratio %.3f/%.3f; %.0fs\n",
          static_cast<unsigned long long>(seed), r.po[0], r.po[1], r.po[2],
          r.base[0], r.base[1], r.base[2], r.token.accuracy(),
          r.together.accuracy(), r.token.positions, r.po_loss_ratio,
          r.base_loss_ratio,
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count());
      std::fflush(stdout);
      out.push_back(r);
    }
    return out;
  }();
  return results;
}

Outcome directional_robustness() {
  int wins = 0;
  std::string detail;
  for (const auto& r : experiment()) {
    const bool ok = r.po[1] >= r.base[1] && r.po[2] >= r.base[2] &&
                    (r.base[0] - r.base[2]) > (r.po[0] - r.po[2]);
    wins += ok ? 1 : 0;
    detail += (detail.empty() ? "" : ", ") +
              std::string(ok ? "pass" : "fail") + " (drop " +
              fmt("%.3f", r.base[0] - r.base[2]) + " vs " +
              fmt("%.3f", r.po[0] - r.po[2]) + ")";
  }
  return {2 * wins > static_cast<int>(kSeeds.size()),
          std::to_string(wins) + "/" + std::to_string(kSeeds.size()) +
              " seeds: " + detail};
}

Outcome recovery_probe_check() {
  int wins = 0;
  std::string detail;
  for (const auto& r : experiment()) {
    const bool ok = r.token.positions >= kProbeMinPositions &&
                    r.token.accuracy() > r.together.accuracy();
    wins += ok ? 1 : 0;
    detail += (detail.empty() ? "" : ", ") + fmt("%.3f", r.token.accuracy()) +
              " > " + fmt("%.3f", r.together.accuracy()) + " (n=" +
              std::to_string(r.token.positions) + ")";
  }
  return {2 * wins > static_cast<int>(kSeeds.size()),
          std::to_string(wins) + "/" + std::to_string(kSeeds.size()) +
              " seeds: " + detail};
}

Outcome clean_parity() {
  double po = 0, base = 0;
  for (const auto& r : experiment()) {
    po += r.po[0];
    base += r.base[0];
  }
  po /= kSeeds.size();
  base /= kSeeds.size();
  return {std::abs(po - base) <= kParityPoints,
          "mean clean F1 parallel_out " + fmt("%.4f", po) + " vs baseline " +
              fmt("%.4f", base) + ", |diff| " + fmt("%.4f", std::abs(po - base)) +
              " <= " + fmt("%.2f", kParityPoints)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria =
      {{"gradient oracle", gradient_oracle},
       {"masking distribution", masking_distribution},
       {"confusion-set algebra", confusion_algebra},
       {"pinyin decomposition suite", decomposition_suite},
       {"determinism", determinism},
       {"directional robustness", directional_robustness},
       {"pinyin-recovery probe", recovery_probe_check},
       {"clean-data parity", clean_parity}};
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("[%s] %zu %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n",
              static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
