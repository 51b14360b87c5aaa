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

#include "pymlm/synthetic.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

namespace pymlm {
namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct Word {
  std::u32string text;
  int class_a, class_b;
  int topic = -1;  // -1 for filler
};

class Language {
 public:
  Language(const PinyinDict& dict, const SyntheticConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    pick_classes(dict, rng);
    make_words(rng);
  }

  // One sentence with `keywords` topic keywords; fills topics and spans.
  std::u32string sentence(Rng& rng, const std::vector<int>& topics,
                          std::vector<std::pair<int, int>>* spans) const {
    const int n_fill =
        cfg_.filler_min +
        static_cast<int>(rng.below(cfg_.filler_max - cfg_.filler_min + 1));
    std::vector<int> slots;
    for (int i = 0; i < n_fill; ++i) slots.push_back(draw_filler(rng));
    for (int t : topics) {
      const int kw = keywords_[t][rng.below(keywords_[t].size())];
      const size_t at = rng.below(slots.size() + 1);
      slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(at), kw);
    }
    std::u32string out;
    for (int w : slots) {
      if (spans != nullptr && words_[w].topic >= 0) {
        spans->emplace_back(static_cast<int>(out.size()), words_[w].topic);
      }
      out += words_[w].text;
    }
    return out;
  }

  char32_t homophone(char32_t ch, Rng& rng) const {
    const auto& members = classes_[class_of_.at(ch)];
    char32_t pick = ch;
    while (pick == ch) pick = members[rng.below(members.size())];
    return pick;
  }

  nlohmann::json lexicon() const {
    nlohmann::json classes = nlohmann::json::array();
    for (size_t c = 0; c < classes_.size(); ++c) {
      classes.push_back(
          {{"pinyin", class_keys_[c]}, {"chars", utf8_encode(classes_[c])}});
    }
    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : words_) {
      words.push_back({{"text", utf8_encode(w.text)},
                       {"pinyin", class_keys_[w.class_a] + " " +
                                      class_keys_[w.class_b]},
                       {"topic", w.topic}});
    }
    return {{"classes", classes}, {"words", words}};
  }

 private:
  void pick_classes(const PinyinDict& dict, Rng& rng) {
    std::map<std::string, std::u32string> by_sound;
    for (const auto& [ch, s] : dict.entries()) by_sound[s.text] += ch;
    std::vector<std::string> keys;
    for (const auto& [k, v] : by_sound) keys.push_back(k);
    shuffle(keys, rng);
    std::set<std::string> used;
    const auto take = [&](int count, size_t size) {
      for (const auto& k : keys) {
        if (count == 0) break;
        if (used.count(k) || by_sound[k].size() < size) continue;
        std::u32string members = by_sound[k];
        std::vector<char32_t> v(members.begin(), members.end());
        shuffle(v, rng);
        classes_.emplace_back(v.begin(), v.begin() + static_cast<long>(size));
        class_keys_.push_back(k);
        used.insert(k);
        --count;
      }
      if (count > 0) {
        throw InvalidArgument("dictionary has too few homophone classes of size " +
                              std::to_string(size));
      }
    };
    take(cfg_.large_classes, 4);
    take(cfg_.small_classes, 3);
    for (size_t c = 0; c < classes_.size(); ++c) {
      for (char32_t ch : classes_[c]) class_of_[ch] = static_cast<int>(c);
    }
  }

  void make_words(Rng& rng) {
    const int n_classes = static_cast<int>(classes_.size());
    if (cfg_.words > n_classes * n_classes) {
      throw InvalidArgument("more words requested than pronunciation pairs");
    }
    std::map<char32_t, int> usage;
    std::set<std::pair<int, int>> pairs;
    const auto pick_char = [&](int c) {
      // Least-used member, ties broken at random.
      std::vector<char32_t> members(classes_[c].begin(), classes_[c].end());
      shuffle(members, rng);
      char32_t best = members[0];
      for (char32_t m : members) {
        if (usage[m] < usage[best]) best = m;
      }
      ++usage[best];
      return best;
    };
    while (static_cast<int>(words_.size()) < cfg_.words) {
      const int a = static_cast<int>(rng.below(n_classes));
      const int b = static_cast<int>(rng.below(n_classes));
      if (!pairs.insert({a, b}).second) continue;
      Word w;
      w.class_a = a;
      w.class_b = b;
      w.text = {pick_char(a), pick_char(b)};
      words_.push_back(std::move(w));
    }
    std::vector<int> order(words_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle(order, rng);
    keywords_.assign(cfg_.topics, {});
    size_t k = 0;
    for (int t = 0; t < cfg_.topics; ++t) {
      for (int i = 0; i < cfg_.keywords_per_topic; ++i, ++k) {
        words_[order[k]].topic = t;
        keywords_[t].push_back(order[k]);
      }
    }
    double total = 0;
    for (int rank = 1; k < order.size(); ++k, ++rank) {
      fillers_.push_back(order[k]);
      total += 1.0 / std::pow(rank, cfg_.zipf_exponent);
      filler_cdf_.push_back(total);
    }
    for (double& c : filler_cdf_) c /= total;
  }

  int draw_filler(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(filler_cdf_.begin(), filler_cdf_.end(), u);
    const size_t i = std::min<size_t>(it - filler_cdf_.begin(),
                                      fillers_.size() - 1);
    return fillers_[i];
  }

  const SyntheticConfig& cfg_;
  std::vector<std::u32string> classes_;
  std::vector<std::string> class_keys_;
  std::map<char32_t, int> class_of_;
  std::vector<Word> words_;
  std::vector<std::vector<int>> keywords_;
  std::vector<int> fillers_;
  std::vector<double> filler_cdf_;
};

std::string topic_label(int t) { return "topic" + std::to_string(t); }
std::string topic_type(int t) { return "T" + std::to_string(t); }

LabeledDataset classify_set(const Language& lang, const SyntheticConfig& cfg,
                            int n, Rng& rng) {
  LabeledDataset ds;
  ds.task = Task::Classify;
  for (int t = 0; t < cfg.topics; ++t) ds.labels.push_back(topic_label(t));
  std::sort(ds.labels.begin(), ds.labels.end());
  for (int i = 0; i < n; ++i) {
    const int t = static_cast<int>(rng.below(cfg.topics));
    ds.examples.push_back({utf8_encode(lang.sentence(rng, {t}, nullptr)),
                           topic_label(t), {}});
  }
  return ds;
}

LabeledDataset tag_set(const Language& lang, const SyntheticConfig& cfg, int n,
                       Rng& rng) {
  LabeledDataset ds;
  ds.task = Task::Tag;
  ds.labels.push_back("O");
  for (int t = 0; t < cfg.topics; ++t) {
    ds.labels.push_back("B-" + topic_type(t));
    ds.labels.push_back("I-" + topic_type(t));
  }
  std::sort(ds.labels.begin(), ds.labels.end());
  for (int i = 0; i < n; ++i) {
    std::vector<int> topics = {static_cast<int>(rng.below(cfg.topics))};
    if (rng.uniform() < 0.5) {
      topics.push_back(static_cast<int>(rng.below(cfg.topics)));
    }
    std::vector<std::pair<int, int>> spans;
    const std::u32string text = lang.sentence(rng, topics, &spans);
    std::vector<std::string> tags(text.size(), "O");
    for (const auto& [start, t] : spans) {
      tags[start] = "B-" + topic_type(t);
      tags[start + 1] = "I-" + topic_type(t);
    }
    ds.examples.push_back({utf8_encode(text), "", std::move(tags)});
  }
  return ds;
}

}  // namespace

std::vector<std::string> SyntheticConfig::validate() const {
  std::vector<std::string> errors;
  if (large_classes < 0 || small_classes < 0 ||
      large_classes + small_classes == 0) {
    errors.push_back("synthetic language needs homophone classes");
  }
  if (topics <= 0 || keywords_per_topic <= 0) {
    errors.push_back("topics and keywords_per_topic must be positive");
  }
  if (words <= topics * keywords_per_topic) {
    errors.push_back("words must exceed topics * keywords_per_topic");
  }
  if (filler_min < 0 || filler_max < filler_min) {
    errors.push_back("filler range is empty");
  }
  if (!(zipf_exponent >= 0)) errors.push_back("zipf_exponent must be >= 0");
  for (int n : {corpus_sentences, classify_train, classify_test, tag_train,
                tag_test, probe_sentences, pair_sentences}) {
    if (n < 0) {
      errors.push_back("sentence counts must be non-negative");
      break;
    }
  }
  if (!(pair_noise >= 0 && pair_noise <= 1)) {
    errors.push_back("pair_noise must lie in [0, 1]");
  }
  return errors;
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"seed", seed},
          {"large_classes", large_classes},
          {"small_classes", small_classes},
          {"words", words},
          {"topics", topics},
          {"keywords_per_topic", keywords_per_topic},
          {"filler_min", filler_min},
          {"filler_max", filler_max},
          {"zipf_exponent", zipf_exponent},
          {"corpus_sentences", corpus_sentences},
          {"classify_train", classify_train},
          {"classify_test", classify_test},
          {"tag_train", tag_train},
          {"tag_test", tag_test},
          {"probe_sentences", probe_sentences},
          {"pair_sentences", pair_sentences},
          {"pair_noise", pair_noise}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig cfg;
  nlohmann::json merged = cfg.to_json();
  for (const auto& [k, v] : j.items()) {
    if (!merged.contains(k)) {
      throw InvalidArgument("unknown synthetic config key '" + k + "'");
    }
    merged[k] = v;
  }
  try {
    cfg.seed = merged["seed"].get<uint64_t>();
    cfg.large_classes = merged["large_classes"].get<int>();
    cfg.small_classes = merged["small_classes"].get<int>();
    cfg.words = merged["words"].get<int>();
    cfg.topics = merged["topics"].get<int>();
    cfg.keywords_per_topic = merged["keywords_per_topic"].get<int>();
    cfg.filler_min = merged["filler_min"].get<int>();
    cfg.filler_max = merged["filler_max"].get<int>();
    cfg.zipf_exponent = merged["zipf_exponent"].get<double>();
    cfg.corpus_sentences = merged["corpus_sentences"].get<int>();
    cfg.classify_train = merged["classify_train"].get<int>();
    cfg.classify_test = merged["classify_test"].get<int>();
    cfg.tag_train = merged["tag_train"].get<int>();
    cfg.tag_test = merged["tag_test"].get<int>();
    cfg.probe_sentences = merged["probe_sentences"].get<int>();
    cfg.pair_sentences = merged["pair_sentences"].get<int>();
    cfg.pair_noise = merged["pair_noise"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad synthetic config: ") + e.what());
  }
  return cfg;
}

SyntheticData generate_synthetic(const PinyinDict& dict,
                                 const SyntheticConfig& cfg) {
  const auto errors = cfg.validate();
  if (!errors.empty()) throw InvalidArgument(errors.front());
  Rng lex_rng(derive_seed(cfg.seed, {1}));
  const Language lang(dict, cfg, lex_rng);

  SyntheticData out;
  out.lexicon = lang.lexicon();
  Rng corpus_rng(derive_seed(cfg.seed, {2}));
  for (int i = 0; i < cfg.corpus_sentences; ++i) {
    const int t = static_cast<int>(corpus_rng.below(cfg.topics));
    out.corpus.push_back(utf8_encode(lang.sentence(corpus_rng, {t}, nullptr)));
  }
  Rng cls_rng(derive_seed(cfg.seed, {3}));
  out.classify_train = classify_set(lang, cfg, cfg.classify_train, cls_rng);
  out.classify_test = classify_set(lang, cfg, cfg.classify_test, cls_rng);
  Rng tag_rng(derive_seed(cfg.seed, {4}));
  out.tag_train = tag_set(lang, cfg, cfg.tag_train, tag_rng);
  out.tag_test = tag_set(lang, cfg, cfg.tag_test, tag_rng);
  Rng probe_rng(derive_seed(cfg.seed, {5}));
  for (int i = 0; i < cfg.probe_sentences; ++i) {
    const int t = static_cast<int>(probe_rng.below(cfg.topics));
    out.probe.push_back(utf8_encode(lang.sentence(probe_rng, {t}, nullptr)));
  }
  Rng pair_rng(derive_seed(cfg.seed, {6}));
  for (int i = 0; i < cfg.pair_sentences; ++i) {
    const int t = static_cast<int>(pair_rng.below(cfg.topics));
    const std::u32string clean = lang.sentence(pair_rng, {t}, nullptr);
    std::u32string noisy = clean;
    for (char32_t& ch : noisy) {
      if (pair_rng.uniform() < cfg.pair_noise) ch = lang.homophone(ch, pair_rng);
    }
    out.eval_pairs.push_back(utf8_encode(clean) + "\t" + utf8_encode(noisy));
  }
  return out;
}

void write_synthetic(const SyntheticData& data, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const auto lines = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& l : v) s += l + "\n";
    return s;
  };
  const fs::path d(dir);
  write_file((d / "corpus.txt").string(), lines(data.corpus));
  write_file((d / "probe.txt").string(), lines(data.probe));
  write_file((d / "eval_pairs.tsv").string(), lines(data.eval_pairs));
  write_file((d / "lexicon.json").string(), data.lexicon.dump(1) + "\n");
  save_dataset((d / "classify_train.jsonl").string(), data.classify_train);
  save_dataset((d / "classify_test.jsonl").string(), data.classify_test);
  save_dataset((d / "tag_train.jsonl").string(), data.tag_train);
  save_dataset((d / "tag_test.jsonl").string(), data.tag_test);
}

}  // namespace pymlm
