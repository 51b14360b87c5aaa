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

// pymlm: command-line front end.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pymlm/checkpoint.h"
#include "pymlm/confusion.h"
#include "pymlm/dataset.h"
#include "pymlm/masking.h"
#include "pymlm/pinyin.h"
#include "pymlm/report.h"
#include "pymlm/synthetic.h"
#include "pymlm/train.h"
#include "pymlm/vocab.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pymlm;

namespace {

constexpr int kManifestVersion = 1;

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

// The flat configuration schema with defaults. Every key can be set in the
// JSON config file or overridden with --key-name on the command line.
json default_config() {
  return {
      {"seed", 0},
      // model
      {"layers", 2},
      {"heads", 4},
      {"hidden", 64},
      {"ffn", 256},
      {"max_len", 32},
      {"dropout", 0.1},
      {"pinyin_mode", "init_final_tone"},
      {"scheme", "parallel_out"},
      // masking
      {"select_rate", 0.45},
      {"mask_prob", 0.8},
      {"confusion_frac", 0.1},
      {"unchanged_frac", 0.1},
      {"task_proportions", {0.8, 0.1, 0.1}},
      {"sampling", "frequency"},
      {"replace_source", "confusion_set"},
      // pretraining
      {"steps", 5000},
      {"batch_size", 32},
      {"lr", 1e-3},
      {"weight_decay", 0.01},
      {"warmup_ratio", 0.1},
      // fine-tuning
      {"finetune_epochs", 10},
      {"finetune_batch_size", 32},
      {"finetune_lr", 1e-3},
      {"finetune_weight_decay", 0.01},
      {"finetune_warmup_ratio", 0.1},
      // vocabulary and confusion sets
      {"min_freq", 1},
      {"provenance", "pretrain"},
      // noise and reports
      {"noise_rate", 0.2},
      {"noise_rates", {0.0, 0.1, 0.2, 0.5}},
      {"noise_train", true},
      {"report_seeds", json::array()},
      // inputs
      {"dict", ""},
      {"corpus", ""},
      {"vocab", ""},
      {"pinyin_vocab", ""},
      {"confusion", ""},
      {"eval_pairs", ""},
      {"eval_confusion", ""},
      {"checkpoint", ""},
      {"variants", json::object()},
      {"dataset", ""},
      {"train_data", ""},
      {"test_data", ""},
      {"chars", ""},
      {"synthetic_config", ""},
  };
}

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

// Parses a command-line override into the type of the default value.
json parse_override(const std::string& key, const std::string& text,
                    const json& like) {
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("");
    }
    if (like.is_number_integer()) {
      size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw UsageError("");
      if (like.is_number_unsigned() || key == "seed") {
        if (v < 0) throw UsageError("");
        return static_cast<uint64_t>(std::stoull(text));
      }
      return v;
    }
    if (like.is_number_float()) {
      size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw UsageError("");
      return v;
    }
    if (like.is_string()) return text;
    if (like.is_array()) {
      if (!text.empty() && text.front() == '[') return json::parse(text);
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw UsageError("");
        if (key == "report_seeds") {
          arr.push_back(static_cast<uint64_t>(std::stoull(item)));
        } else {
          arr.push_back(v);
        }
      }
      return arr;
    }
    if (like.is_object()) {
      if (!text.empty() && text.front() == '{') return json::parse(text);
      // name=path,name=path
      json obj = json::object();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("");
        obj[item.substr(0, eq)] = item.substr(eq + 1);
      }
      return obj;
    }
  } catch (const UsageError&) {
  } catch (const std::exception&) {
  }
  throw UsageError("cannot parse --" + dashed(key) + " value '" + text + "'");
}

struct Settings {
  json config;  // resolved, every key present
  ModelConfig model;
  MaskingConfig masking;
  TrainConfig train;
  FinetuneConfig finetune;
  uint64_t seed = 0;
};

// Builds typed configs, appending every violated invariant to `errors`.
Settings resolve(const json& cfg, std::vector<std::string>& errors) {
  Settings s;
  s.config = cfg;
  const auto guard = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(std::string(what) + ": " + e.what());
    }
  };
  guard("seed", [&] { s.seed = cfg.at("seed").get<uint64_t>(); });
  s.model.layers = cfg.at("layers").get<int>();
  s.model.heads = cfg.at("heads").get<int>();
  s.model.hidden = cfg.at("hidden").get<int>();
  s.model.ffn = cfg.at("ffn").get<int>();
  s.model.max_len = cfg.at("max_len").get<int>();
  s.model.dropout = cfg.at("dropout").get<double>();
  guard("pinyin_mode", [&] {
    s.model.pinyin_mode =
        parse_pinyin_mode(cfg.at("pinyin_mode").get<std::string>());
  });
  guard("scheme", [&] {
    s.model.scheme = parse_scheme(cfg.at("scheme").get<std::string>());
  });
  s.masking.select_rate = cfg.at("select_rate").get<double>();
  s.masking.mask_prob = cfg.at("mask_prob").get<double>();
  s.masking.confusion_frac = cfg.at("confusion_frac").get<double>();
  s.masking.unchanged_frac = cfg.at("unchanged_frac").get<double>();
  guard("task_proportions", [&] {
    const auto t = cfg.at("task_proportions").get<std::vector<double>>();
    if (t.size() != 3) throw InvalidArgument("needs exactly three values");
    s.masking.task_proportions = {t[0], t[1], t[2]};
  });
  guard("sampling", [&] {
    s.masking.strategy =
        parse_sampling_strategy(cfg.at("sampling").get<std::string>());
  });
  guard("replace_source", [&] {
    s.masking.replace_source =
        parse_replace_source(cfg.at("replace_source").get<std::string>());
  });
  s.masking.scheme = s.model.scheme;
  s.train.steps = cfg.at("steps").get<int64_t>();
  s.train.batch_size = cfg.at("batch_size").get<int>();
  s.train.lr = cfg.at("lr").get<double>();
  s.train.weight_decay = cfg.at("weight_decay").get<double>();
  s.train.warmup_ratio = cfg.at("warmup_ratio").get<double>();
  s.train.seed = s.seed;
  s.finetune.epochs = cfg.at("finetune_epochs").get<int>();
  s.finetune.batch_size = cfg.at("finetune_batch_size").get<int>();
  s.finetune.lr = cfg.at("finetune_lr").get<double>();
  s.finetune.weight_decay = cfg.at("finetune_weight_decay").get<double>();
  s.finetune.warmup_ratio = cfg.at("finetune_warmup_ratio").get<double>();
  s.finetune.seed = s.seed;

  // Vocabulary sizes are filled in later; check the rest now.
  ModelConfig probe = s.model;
  probe.char_vocab_size = CharVocab::kNumSpecials + 1;
  probe.pinyin_table_sizes.assign(component_count(probe.pinyin_mode), 4);
  for (auto& e : probe.validate()) errors.push_back(std::move(e));
  for (auto& e : s.masking.validate()) errors.push_back(std::move(e));
  for (auto& e : s.train.validate()) errors.push_back(std::move(e));
  for (auto& e : s.finetune.validate()) errors.push_back(std::move(e));
  if (cfg.at("min_freq").get<int64_t>() < 1) {
    errors.push_back("min_freq must be at least 1");
  }
  const std::string prov = cfg.at("provenance").get<std::string>();
  if (prov != "pretrain" && prov != "eval") {
    errors.push_back("provenance must be 'pretrain' or 'eval'");
  }
  const double rate = cfg.at("noise_rate").get<double>();
  if (!(rate >= 0 && rate <= 1)) errors.push_back("noise_rate must lie in [0, 1]");
  for (const auto& r : cfg.at("noise_rates")) {
    if (!r.is_number() || !(r.get<double>() >= 0 && r.get<double>() <= 1)) {
      errors.push_back("noise_rates entries must lie in [0, 1]");
      break;
    }
  }
  for (const auto& r : cfg.at("report_seeds")) {
    if (!r.is_number_unsigned()) {
      errors.push_back("report_seeds entries must be non-negative integers");
      break;
    }
  }
  for (const auto& [name, path] : cfg.at("variants").items()) {
    if (!path.is_string()) {
      errors.push_back("variant '" + name + "' must map to a checkpoint path");
    }
  }
  return s;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

// Records every input read and output written by one command.
class Run {
 public:
  Run(std::string command, Settings settings, fs::path out)
      : s(std::move(settings)),
        command_(std::move(command)),
        out_(std::move(out)) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create " + out_.string() + ": " + ec.message());
  }

  Settings s;

  // Path-valued config key; throws UsageError when unset.
  std::string input(const std::string& key) {
    const std::string path = s.config.at(key).get<std::string>();
    if (path.empty()) {
      throw UsageError(command_ + " requires --" + dashed(key));
    }
    return track(path);
  }
  std::string optional_input(const std::string& key) {
    const std::string path = s.config.at(key).get<std::string>();
    return path.empty() ? path : track(path);
  }
  std::string track(const std::string& path) {
    if (!fs::is_regular_file(path)) throw IoError("no such file: " + path);
    inputs_[path] = sha256_hex(read_file(path));
    return path;
  }

  const fs::path& out_dir() const { return out_; }

  std::string output(const std::string& name) {
    outputs_.push_back(name);
    return (out_ / name).string();
  }

  void write_manifest() const {
    const std::string cfg_text = s.config.dump();
    json manifest = {{"manifest_version", kManifestVersion},
                     {"command", command_},
                     {"version", PYMLM_VERSION},
                     {"seed", s.seed},
                     {"config", s.config},
                     {"config_sha256", sha256_hex(cfg_text)},
                     {"inputs", inputs_},
                     {"outputs", outputs_}};
    write_file((out_ / (command_ + ".manifest.json")).string(),
               manifest.dump(1) + "\n");
  }

 private:
  std::string command_;
  fs::path out_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------

PinyinVocab pinyin_vocab_for(Run& run, const PinyinDict& dict) {
  const std::string path = run.optional_input("pinyin_vocab");
  if (!path.empty()) {
    try {
      return PinyinVocab::from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  if (run.s.model.pinyin_mode == PinyinMode::None) return PinyinVocab();
  return build_pinyin_vocab(dict, run.s.model.pinyin_mode);
}

EvalConfusionSet eval_confusion_for(Run& run, const PinyinDict& dict) {
  const std::string path = run.optional_input("eval_confusion");
  if (!path.empty()) return EvalConfusionSet::load(path);
  const std::string pairs = run.optional_input("eval_pairs");
  if (pairs.empty()) {
    throw UsageError("needs --eval-confusion or --eval-pairs");
  }
  return build_eval_confusion_set(pairs, dict);
}

void cmd_build_vocab(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const auto corpus = read_lines(run.input("corpus"));
  const CharVocab vocab = build_char_vocab(
      corpus, run.s.config.at("min_freq").get<uint64_t>());
  const PinyinVocab pv = run.s.model.pinyin_mode == PinyinMode::None
                             ? PinyinVocab()
                             : build_pinyin_vocab(dict, run.s.model.pinyin_mode);
  vocab.save(run.output("vocab.tsv"));
  write_file(run.output("pinyin_vocab.json"), pv.to_json().dump(1) + "\n");
  std::cerr << "vocab: " << vocab.size() << " ids; pinyin tables:";
  for (int32_t n : pv.table_sizes()) std::cerr << ' ' << n;
  std::cerr << '\n';
}

void cmd_build_confusion(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  if (run.s.config.at("provenance") == "eval") {
    const std::string pairs = run.s.config.at("eval_pairs").get<std::string>();
    if (pairs.empty()) {
      throw UsageError("an eval confusion set requires --eval-pairs");
    }
    const auto cs = build_eval_confusion_set(run.track(pairs), dict);
    cs.save(run.output("confusion_eval.json"));
    std::cerr << "eval confusion set: " << cs.classes().size()
              << " classes, " << cs.skipped_pairs() << " skipped pairs\n";
    return;
  }
  const CharVocab vocab = CharVocab::load(run.input("vocab"));
  const auto cs = build_confusion_set(vocab, dict);
  cs.save(run.output("confusion_pretrain.json"));
  std::cerr << "pretrain confusion set: " << cs.classes().size()
            << " classes\n";
}

void cmd_pretrain(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const auto corpus = read_lines(run.input("corpus"));
  const std::string vocab_path = run.optional_input("vocab");
  const CharVocab vocab =
      vocab_path.empty()
          ? build_char_vocab(corpus, run.s.config.at("min_freq").get<uint64_t>())
          : CharVocab::load(vocab_path);
  const EncoderBundle bundle(vocab, dict, run.s.model.pinyin_mode,
                             pinyin_vocab_for(run, dict));
  const std::string cs_path = run.optional_input("confusion");
  const PretrainConfusionSet cs = cs_path.empty()
                                      ? build_confusion_set(vocab, dict)
                                      : PretrainConfusionSet::load(cs_path);
  const TrainRun result = pretrain(corpus, bundle.encoder(), cs, run.s.model,
                                   run.s.masking, run.s.train);
  save_checkpoint(run.output("checkpoint.bin"), result.checkpoint);
  write_file(run.output("loss_curve.tsv"), result.loss_curve_tsv());
  write_file(run.output("train_run.json"), result.summary().dump(1) + "\n");
  if (!result.loss_curve.empty()) {
    std::cerr << "pretrain: " << result.loss_curve.size() << " steps, loss "
              << result.loss_curve.front().loss << " -> "
              << result.loss_curve.back().loss << '\n';
  }
}

void cmd_noise(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const LabeledDataset ds = load_dataset(run.input("dataset"));
  const EvalConfusionSet cs = eval_confusion_for(run, dict);
  Rng rng(derive_seed(run.s.seed, {0x6e6f697365}));
  const NoisyDataset noisy =
      inject_noise(ds, run.s.config.at("noise_rate").get<double>(), cs, rng);
  save_dataset(run.output("noisy.jsonl"), noisy.data);
  write_file(run.output("noise_stats.json"),
             noisy.stats.to_json().dump(1) + "\n");
  std::cerr << "noise: " << noisy.stats.substitutions << " substitutions in "
            << noisy.stats.examples << " examples\n";
}

void cmd_finetune(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const Checkpoint ckpt = load_checkpoint(run.input("checkpoint"));
  const EncoderBundle bundle = EncoderBundle::from_checkpoint(ckpt, dict);
  const LabeledDataset train = load_dataset(run.input("train_data"));
  TaskModel model = finetune(ckpt, train, bundle.encoder(), run.s.finetune);
  json metrics = {{"train_f1", evaluate_f1(model, train, bundle.encoder())}};
  const std::string test_path = run.optional_input("test_data");
  if (!test_path.empty()) {
    metrics["test_f1"] =
        evaluate_f1(model, load_dataset(test_path), bundle.encoder());
  }
  save_checkpoint(run.output("finetuned.bin"), model.to_checkpoint());
  write_file(run.output("metrics.json"), metrics.dump(1) + "\n");
  std::cerr << "finetune: " << metrics.dump() << '\n';
}

void cmd_report(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const std::string train_path = run.input("train_data");
  const std::string test_path = run.input("test_data");
  const LabeledDataset train = load_dataset(train_path);
  const LabeledDataset test = load_dataset(test_path);
  const EvalConfusionSet cs = eval_confusion_for(run, dict);
  const json& variants = run.s.config.at("variants");
  if (variants.empty()) throw UsageError("report requires --variants");
  std::vector<std::string> names;
  std::vector<Checkpoint> ckpts;
  std::vector<EncoderBundle> bundles;
  for (const auto& [name, path] : variants.items()) {
    names.push_back(name);
    ckpts.push_back(load_checkpoint(run.track(path.get<std::string>())));
    bundles.push_back(EncoderBundle::from_checkpoint(ckpts.back(), dict));
  }
  std::vector<ReportVariant> list;
  for (size_t i = 0; i < names.size(); ++i) {
    list.push_back({names[i], &ckpts[i], &bundles[i].encoder()});
  }
  ReportConfig rc;
  rc.rates = run.s.config.at("noise_rates").get<std::vector<double>>();
  rc.seeds = run.s.config.at("report_seeds").get<std::vector<uint64_t>>();
  if (rc.seeds.empty()) rc.seeds = {run.s.seed};
  rc.finetune = run.s.finetune;
  rc.noise_train = run.s.config.at("noise_train").get<bool>();
  rc.dataset_id = "sha256:" + sha256_hex(read_file(test_path));
  const RobustnessReport report = robustness_report(list, train, test, cs, rc);
  write_file(run.output("report.tsv"), report.to_tsv());
  write_file(run.output("report.json"), report.metadata.dump(1) + "\n");
  std::cout << report.to_tsv();
}

void cmd_export(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const Checkpoint ckpt = load_checkpoint(run.input("checkpoint"));
  const EncoderBundle bundle = EncoderBundle::from_checkpoint(ckpt, dict);
  std::vector<std::string> warnings;
  const std::string table = export_embeddings(
      ckpt, bundle.encoder(),
      utf8_decode(run.s.config.at("chars").get<std::string>()), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_file(run.output("embeddings.tsv"), table);
}

void cmd_gen_synthetic(Run& run) {
  const PinyinDict dict = load_dictionary(run.input("dict"));
  const std::string cfg_path = run.optional_input("synthetic_config");
  SyntheticConfig cfg;
  if (!cfg_path.empty()) {
    try {
      cfg = SyntheticConfig::from_json(json::parse(read_file(cfg_path)));
    } catch (const json::parse_error& e) {
      throw ParseError(cfg_path + ": " + e.what());
    }
  }
  const SyntheticData data = generate_synthetic(dict, cfg);
  for (const char* name :
       {"corpus.txt", "probe.txt", "eval_pairs.tsv", "lexicon.json",
        "classify_train.jsonl", "classify_test.jsonl", "tag_train.jsonl",
        "tag_test.jsonl"}) {
    run.output(name);
  }
  write_synthetic(data, run.out_dir().string());
}

// Loads the config file; a manifest is accepted in place of a config.
json load_config_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
  if (j.contains("manifest_version")) return j.at("config");
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pinyin-aware masked language model toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = ".";
  app.add_option("--config", config_path, "JSON config file (or a manifest)");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();

  const json defaults = default_config();
  std::map<std::string, std::string> overrides;
  for (const auto& [key, value] : defaults.items()) {
    app.add_option("--" + dashed(key), overrides[key],
                   "Override '" + key + "' (default " + value.dump() + ")");
  }

  const std::vector<std::pair<std::string, void (*)(Run&)>> commands = {
      {"build-vocab", cmd_build_vocab},
      {"build-confusion", cmd_build_confusion},
      {"pretrain", cmd_pretrain},
      {"noise", cmd_noise},
      {"finetune", cmd_finetune},
      {"report", cmd_report},
      {"export-embeddings", cmd_export},
      {"gen-synthetic", cmd_gen_synthetic}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    subs[name] = app.add_subcommand(name)->fallthrough();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    json cfg = defaults;
    std::vector<std::string> errors;
    if (!config_path.empty()) {
      const json file_cfg = load_config_file(config_path);
      for (const auto& [key, value] : file_cfg.items()) {
        if (!defaults.contains(key)) {
          errors.push_back("unknown config key '" + key + "'");
        } else if (!same_kind(value, defaults[key])) {
          errors.push_back("config key '" + key + "' should look like " +
                           defaults[key].dump());
        } else {
          cfg[key] = value;
        }
      }
    }
    for (const auto& [key, text] : overrides) {
      if (app.count("--" + dashed(key)) == 0) continue;
      try {
        cfg[key] = parse_override(key, text, defaults[key]);
      } catch (const UsageError& e) {
        errors.push_back(e.what());
      }
    }
    Settings settings = resolve(cfg, errors);
    if (!errors.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& e : errors) msg += "\n  - " + e;
      throw UsageError(msg);
    }
    for (const auto& [name, fn] : commands) {
      if (!subs[name]->parsed()) continue;
      Run run(name, settings, out_dir);
      fn(run);
      run.write_manifest();
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
