#pragma once

// Paired human/machine news-snippet datasets.
//
// A human article is cleaned of its byline/dateline header, its first ten
// words become the generation prefix, and both the article and the machine
// continuation are cut to exactly 500 code points. The two texts form a
// pair that is never separated across splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mgtbench/errors.hpp"
#include "mgtbench/random.hpp"
#include "mgtbench/text.hpp"

namespace mgtbench {

inline constexpr std::size_t kSampleChars = 500;
inline constexpr std::size_t kPrefixWords = 10;

enum class Label { human, machine };
enum class Split { train, eval, test };

inline const char* to_string(Label l) { return l == Label::human ? "human" : "machine"; }
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::eval: return "eval";
    case Split::test: return "test";
  }
  return "?";
}
inline Label parse_label(std::string_view s) {
  if (s == "human") return Label::human;
  if (s == "machine") return Label::machine;
  throw InputError("unknown label '" + std::string(s) + "'");
}
inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

struct RawRecord {
  std::string id;
  std::string text;
};

struct CleanArticle {
  std::string article_id;
  std::string text;
  std::string source_tag;
  // Set when the cleaned text has fewer than 500 code points; the pair built
  // from this article is discarded later.
  bool too_short = false;
};

struct Prefix {
  std::vector<std::string> words;
  std::string origin_article_id;

  std::string joined() const { return text::join(words, " "); }
};

struct TextSample {
  std::string sample_id;
  std::string text;
  Label label = Label::human;
  std::string pair_id;
  std::optional<std::string> generator;
  std::optional<std::string> attack;
  std::optional<std::string> prompt_id;

  friend bool operator==(const TextSample&, const TextSample&) = default;
};

struct Discard {
  std::string pair_id;
  std::string reason;

  friend bool operator==(const Discard&, const Discard&) = default;
};

struct BuildManifest {
  std::string source_corpus;
  std::size_t articles_in = 0;
  std::size_t missing_generation = 0;
  std::vector<Discard> discards;
  // Generation parameters and prompt used for the machine side, when known.
  nlohmann::json generation = nlohmann::json::object();

  friend bool operator==(const BuildManifest&, const BuildManifest&) = default;
};

struct PairedDataset {
  std::string dataset_id;
  std::string generator;
  std::optional<std::string> attack;
  std::vector<TextSample> samples;
  std::map<Split, std::set<std::string>> splits;
  std::uint64_t seed = 0;
  // Attacked datasets are evaluation-only: thresholds must come from the
  // unattacked eval split, so calibrating on these is refused.
  bool calibration_locked = false;
  BuildManifest manifest;

  std::optional<Split> split_of(const std::string& pair_id) const {
    for (const auto& [split, ids] : splits) {
      if (ids.count(pair_id)) return split;
    }
    return std::nullopt;
  }

  std::vector<const TextSample*> samples_in(Split split) const {
    std::vector<const TextSample*> out;
    auto it = splits.find(split);
    if (it == splits.end()) return out;
    for (const auto& s : samples) {
      if (it->second.count(s.pair_id)) out.push_back(&s);
    }
    return out;
  }

  std::size_t pair_count() const {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.pair_id);
    return ids.size();
  }

  friend bool operator==(const PairedDataset&, const PairedDataset&) = default;
};

// ---------------------------------------------------------------------------
// Cleaning

using HeaderCleaner = std::function<std::string(std::string_view)>;

// Default cleaner for wire-style news text. Removes, repeatedly, a leading
//   [LOCATION] (OUTLET) -- ...      dateline, with "--", "—" or "–"; the location
//                                   leads with an all-caps word
//   By <name>, <outlet> <delim> ... byline, delimited by a newline, dash or " . "
// and returns the rest starting at the first non-space character.
inline std::string strip_news_header(std::string_view raw) {
  static const std::regex dateline(
      R"(^\s*(?:[A-Z][A-Z.'’-]+(?:[ ,]+[A-Za-z.'’-]+){0,5}\s*)?\([A-Z][^()\n]{0,39}\)\s*(?:--|—|–)\s*)");
  static const std::regex byline(R"(^\s*By\s+[^,\n]{1,80},\s*[^\n]{1,80}?\s*(?:\n|--|—|–|\s\.\s)\s*)");
  std::string s(raw);
  for (int pass = 0; pass < 4; ++pass) {
    std::smatch m;
    if (std::regex_search(s, m, dateline) || std::regex_search(s, m, byline)) {
      s.erase(0, static_cast<std::size_t>(m.length(0)));
    } else {
      break;
    }
  }
  return std::string(text::trim_left(s));
}

// Records keep their input order. Empty text is rejected with the record id.
inline std::vector<CleanArticle> ingest_articles(const std::vector<RawRecord>& records,
                                                 const std::string& source_tag,
                                                 const HeaderCleaner& cleaner = strip_news_header) {
  std::vector<CleanArticle> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (text::trim(r.text).empty()) throw InputError("record '" + r.id + "' has empty text");
    CleanArticle a{r.id, cleaner(r.text), source_tag, false};
    if (a.text.empty()) throw InputError("record '" + r.id + "' is empty after header cleaning");
    a.too_short = text::codepoint_count(a.text) < kSampleChars;
    out.push_back(std::move(a));
  }
  return out;
}

inline Prefix extract_prefix(const CleanArticle& article) {
  auto words = text::split_words(article.text);
  if (words.size() < kPrefixWords) throw PrefixTooShort(article.article_id, words.size());
  words.resize(kPrefixWords);
  return Prefix{std::move(words), article.article_id};
}

inline std::string truncate_chars(std::string_view s, std::size_t n) {
  const std::size_t have = text::codepoint_count(s);
  if (have < n) {
    throw TooShort("text has " + std::to_string(have) + " characters, need " + std::to_string(n));
  }
  return text::take_codepoints(s, n);
}

inline std::string truncate_to_500(std::string_view s) { return truncate_chars(s, kSampleChars); }

// ---------------------------------------------------------------------------
// Pairing and splitting

inline std::string pair_id_for(const std::string& article_id) { return "p-" + article_id; }

struct PairOptions {
  std::string dataset_id;
  std::string generator;
  std::string source_corpus;
  std::optional<std::string> prompt_id;
};

// Builds human/machine pairs. Pairs are discarded (both sides) when either
// text is under 500 characters; articles with no generation are counted in
// the manifest. Within-pair sample order is shuffled under `seed`.
inline PairedDataset build_paired_dataset(const std::vector<CleanArticle>& articles,
                                          const std::map<std::string, std::string>& generated,
                                          std::uint64_t seed, const PairOptions& opts) {
  std::set<std::string> known;
  for (const auto& a : articles) known.insert(a.article_id);
  for (const auto& [id, _] : generated) {
    if (!known.count(id)) throw InputError("generation keyed by unknown article '" + id + "'");
  }

  PairedDataset ds;
  ds.dataset_id = opts.dataset_id;
  ds.generator = opts.generator;
  ds.seed = seed;
  ds.manifest.source_corpus = opts.source_corpus;
  ds.manifest.articles_in = articles.size();

  Rng rng = Rng::derive(seed, "pair-order");
  for (const auto& a : articles) {
    const std::string pid = pair_id_for(a.article_id);
    if (a.too_short || text::codepoint_count(a.text) < kSampleChars) {
      ds.manifest.discards.push_back({pid, "human_too_short"});
      continue;
    }
    auto g = generated.find(a.article_id);
    if (g == generated.end()) {
      ++ds.manifest.missing_generation;
      continue;
    }
    if (text::codepoint_count(g->second) < kSampleChars) {
      ds.manifest.discards.push_back({pid, "machine_too_short"});
      continue;
    }
    TextSample human{pid + "-h", truncate_to_500(a.text), Label::human, pid, std::nullopt, std::nullopt,
                     std::nullopt};
    TextSample machine{pid + "-m", truncate_to_500(g->second), Label::machine, pid, opts.generator,
                       std::nullopt, opts.prompt_id};
    if (rng.bernoulli(0.5)) {
      ds.samples.push_back(std::move(machine));
      ds.samples.push_back(std::move(human));
    } else {
      ds.samples.push_back(std::move(human));
      ds.samples.push_back(std::move(machine));
    }
  }
  return ds;
}

// Largest-remainder apportionment of `total` items over `fractions`. Any
// split with a positive fraction receives at least one item when there are
// enough items to go round.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1, got " + std::to_string(sum));

  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double quota = fractions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(quota - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];

  std::size_t positive = 0;
  for (double f : fractions) positive += f > 0.0;
  if (total >= positive) {
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      if (fractions[i] > 0.0 && counts[i] == 0) {
        auto donor = std::max_element(counts.begin(), counts.end()) - counts.begin();
        --counts[static_cast<std::size_t>(donor)];
        ++counts[i];
      }
    }
  }
  return counts;
}

struct SplitFractions {
  double train = 0.8;
  double eval = 0.1;
  double test = 0.1;
};

// Assigns whole pairs to train/eval/test. Pair ids are sorted before the
// seeded shuffle so the result does not depend on sample order.
inline PairedDataset split_dataset(PairedDataset ds, std::uint64_t seed, SplitFractions f = {}) {
  std::set<std::string> unique;
  for (const auto& s : ds.samples) unique.insert(s.pair_id);
  std::vector<std::string> ids(unique.begin(), unique.end());
  const auto counts = apportion(ids.size(), {f.train, f.eval, f.test});

  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(ids);
  ds.splits.clear();
  ds.splits[Split::train];
  ds.splits[Split::eval];
  ds.splits[Split::test];
  std::size_t k = 0;
  const Split order[] = {Split::train, Split::eval, Split::test};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t n = 0; n < counts[i]; ++n) ds.splits[order[i]].insert(ids[k++]);
  }
  return ds;
}

// Mixes whole pairs drawn without replacement from each source's train split,
// then re-splits the mixture. Pair ids are namespaced by source dataset.
inline PairedDataset build_round_robin(const std::vector<PairedDataset>& sources, std::size_t pairs_per_source,
                                       std::uint64_t seed, const std::string& dataset_id = "round_robin",
                                       SplitFractions f = {}) {
  PairedDataset mix;
  mix.dataset_id = dataset_id;
  mix.generator = "round_robin";
  mix.seed = seed;
  for (const auto& src : sources) {
    auto it = src.splits.find(Split::train);
    if (it == src.splits.end() || it->second.size() < pairs_per_source) {
      const std::size_t have = it == src.splits.end() ? 0 : it->second.size();
      throw InsufficientData("source '" + src.dataset_id + "' has " + std::to_string(have) +
                             " train pairs, need " + std::to_string(pairs_per_source));
    }
    std::vector<std::string> ids(it->second.begin(), it->second.end());
    Rng rng = Rng::derive(seed, "round-robin:" + src.dataset_id);
    rng.shuffle(ids);
    ids.resize(pairs_per_source);
    const std::set<std::string> chosen(ids.begin(), ids.end());
    for (const auto& s : src.samples) {
      if (!chosen.count(s.pair_id)) continue;
      TextSample copy = s;
      copy.pair_id = src.dataset_id + ":" + s.pair_id;
      copy.sample_id = src.dataset_id + ":" + s.sample_id;
      if (copy.label == Label::machine && !copy.generator) copy.generator = src.generator;
      mix.samples.push_back(std::move(copy));
    }
    if (!mix.manifest.source_corpus.empty()) mix.manifest.source_corpus += "+";
    mix.manifest.source_corpus += src.dataset_id;
  }
  return split_dataset(std::move(mix), seed, f);
}

// Full-scan check of the structural invariants. Returns one message per
// violation; empty means the dataset is well formed.
inline std::vector<std::string> check_integrity(const PairedDataset& ds) {
  std::vector<std::string> problems;
  std::map<std::string, std::pair<int, int>> per_pair;
  for (const auto& s : ds.samples) {
    if (text::codepoint_count(s.text) != kSampleChars) {
      problems.push_back("sample '" + s.sample_id + "' is not 500 characters");
    }
    if (s.label == Label::human && s.generator) problems.push_back("human sample '" + s.sample_id + "' has a generator");
    if (s.label == Label::machine && !s.generator) {
      problems.push_back("machine sample '" + s.sample_id + "' lacks a generator");
    }
    auto& [h, m] = per_pair[s.pair_id];
    (s.label == Label::human ? h : m)++;
  }
  for (const auto& [pid, hm] : per_pair) {
    if (hm.first != 1 || hm.second != 1) problems.push_back("pair '" + pid + "' is not exactly one human + one machine");
  }
  if (!ds.splits.empty()) {
    for (const auto& [pid, _] : per_pair) {
      int hits = 0;
      for (const auto& [split, ids] : ds.splits) hits += static_cast<int>(ids.count(pid));
      if (hits != 1) problems.push_back("pair '" + pid + "' appears in " + std::to_string(hits) + " splits");
    }
    for (const auto& [split, ids] : ds.splits) {
      std::size_t h = 0, m = 0;
      for (const auto* s : ds.samples_in(split)) (s->label == Label::human ? h : m)++;
      if (h != m) problems.push_back(std::string("split ") + to_string(split) + " is unbalanced");
    }
  }
  return problems;
}

}  // namespace mgtbench
