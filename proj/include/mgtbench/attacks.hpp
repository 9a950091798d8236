#pragma once

// Evasion attacks. Each attack regenerates only the machine half of an
// existing test split; human samples are copied through untouched and the
// result is locked against threshold calibration.

#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/digest.hpp"
#include "mgtbench/fsutil.hpp"
#include "mgtbench/generation.hpp"
#include "mgtbench/parallel.hpp"

namespace mgtbench {

enum class AttackId { none, high_temperature, repetition_penalty, news_prompt, tweet_prompt, example_prompt, paraphrase };

inline const char* to_string(AttackId a) {
  switch (a) {
    case AttackId::none: return "none";
    case AttackId::high_temperature: return "high_temperature";
    case AttackId::repetition_penalty: return "repetition_penalty";
    case AttackId::news_prompt: return "news_prompt";
    case AttackId::tweet_prompt: return "tweet_prompt";
    case AttackId::example_prompt: return "example_prompt";
    case AttackId::paraphrase: return "paraphrase";
  }
  return "?";
}

inline AttackId parse_attack_id(std::string_view s) {
  for (auto a : {AttackId::none, AttackId::high_temperature, AttackId::repetition_penalty, AttackId::news_prompt,
                 AttackId::tweet_prompt, AttackId::example_prompt, AttackId::paraphrase}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown attack '" + std::string(s) + "'");
}

// Subset of GenerationParams an attack may change.
struct ParamOverrides {
  std::optional<double> temperature;
  std::optional<double> repetition_penalty;

  GenerationParams apply(GenerationParams p) const {
    if (temperature) p.temperature = *temperature;
    if (repetition_penalty) p.repetition_penalty = *repetition_penalty;
    return p;
  }

  friend bool operator==(const ParamOverrides&, const ParamOverrides&) = default;
};

struct AttackSpec {
  AttackId attack_id = AttackId::none;
  ParamOverrides param_overrides;
  std::optional<PromptTemplate> template_override;
  std::optional<std::string> paraphraser_backend;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

// ---------------------------------------------------------------------------
// Prompt catalog, transcribed as published.

namespace prompts {

inline const std::string kNewsSystem =
    "You are an intern news writer for CNN. You write news articles with grammar and spelling errors, like all "
    "humans do. Some of your sentences don't make a lot of sense due to unexpected words used.";
inline const std::string kNewsUser = "Your job is to write a news article starting with: {prefix}";

inline const std::string kTweetSystem =
    "You are a tweeter user tweeting news information from news articles to your followers";
inline const std::string kTweetUser = "Write a 500 characters news tweet starting with: {prefix}";

inline const std::string kParaphraseSystem =
    "You are a paraphraser. You are given an input passage ‘INPUT’. You should paraphrase "
    "‘INPUT’ to print ‘OUTPUT’.\"\n"
    "\"‘OUTPUT’ shoud be diverse and different as much as possible from ‘INPUT’ and should "
    "not copy any part verbatim from ‘INPUT’.\"\n"
    "\"‘OUTPUT’ should preserve the meaning and content of ’INPUT’ while maintaining text "
    "quality and grammar.\"\n"
    "\"‘OUTPUT’ should not be much longer than ‘INPUT’. You should print ‘OUTPUT’ "
    "and nothing else so that its easy for me to parse.";
inline const std::string kParaphraseUser = "INPUT: {fake_text}";

inline const std::string kExampleSystem =
    "You will receive an example of news article delimited by <ARTICLE_START> and <ARTICLE_END>. You will write "
    "news articles following the same writing style to immitate the original writer's writing.";
inline const std::string kExampleUser =
    "Here is an example of a news article:\n"
    "<ARTICLE_START>\n"
    "Dozens more bodies have been recovered from a mass grave at a hospital in Khan Younis, according to the Gaza "
    "General Directorate of Civil Defense.\n"
    "The Civil Defense said 324 bodies had now been recovered at the Nasser Medical Complex following the "
    "withdrawal of Israeli forces from the area earlier this month.\n"
    "In the latest recovery efforts, the bodies of 51 people of \"various categories and ages\" had been "
    "recovered. Of them, 30 bodies were identified.\n"
    "Col. Yamen Abu Suleiman, Director of Civil Defense in Khan Younis, previously told CNN that some of the "
    "bodies had been found with hands and feet tied, and there were signs of field executions.\n"
    "The Civil Defense said Wednesday that crews would continue search and recovery operations in the coming "
    "days.\n"
    "<ARTICLE_END>\n"
    "Write a news article in the same style as the article above starting with: {prefix}";

}  // namespace prompts

inline PromptTemplate paraphrase_template() {
  return {"paraphrase", prompts::kParaphraseSystem, prompts::kParaphraseUser, PromptMode::chat};
}

// The baseline plus the six evasion attacks.
inline std::vector<AttackSpec> list_attacks(const std::string& paraphraser = "paraphraser") {
  return {
      {AttackId::none, {}, std::nullopt, std::nullopt},
      {AttackId::high_temperature, {1.2, std::nullopt}, std::nullopt, std::nullopt},
      {AttackId::repetition_penalty, {std::nullopt, 1.2}, std::nullopt, std::nullopt},
      {AttackId::news_prompt, {}, PromptTemplate{"news_prompt", prompts::kNewsSystem, prompts::kNewsUser, PromptMode::chat}, std::nullopt},
      {AttackId::tweet_prompt, {}, PromptTemplate{"tweet_prompt", prompts::kTweetSystem, prompts::kTweetUser, PromptMode::chat}, std::nullopt},
      {AttackId::example_prompt, {}, PromptTemplate{"example_prompt", prompts::kExampleSystem, prompts::kExampleUser, PromptMode::chat}, std::nullopt},
      {AttackId::paraphrase, {}, paraphrase_template(), paraphraser},
  };
}

inline AttackSpec find_attack(std::string_view id, const std::string& paraphraser = "paraphraser") {
  const AttackId want = parse_attack_id(id);
  for (auto& a : list_attacks(paraphraser)) {
    if (a.attack_id == want) return a;
  }
  throw ConfigError("attack '" + std::string(id) + "' missing from catalog");
}

inline json attack_to_json(const AttackSpec& a) {
  json j = {{"attack_id", to_string(a.attack_id)}};
  json o = json::object();
  if (a.param_overrides.temperature) o["temperature"] = *a.param_overrides.temperature;
  if (a.param_overrides.repetition_penalty) o["repetition_penalty"] = *a.param_overrides.repetition_penalty;
  j["param_overrides"] = o;
  if (a.template_override) {
    j["template"] = {{"prompt_id", a.template_override->prompt_id},
                     {"system", a.template_override->system ? json(*a.template_override->system) : json(nullptr)},
                     {"user", a.template_override->user},
                     {"mode", to_string(a.template_override->mode)}};
  } else {
    j["template"] = nullptr;
  }
  j["paraphraser_backend"] = a.paraphraser_backend ? json(*a.paraphraser_backend) : json(nullptr);
  return j;
}

inline json attack_catalog_json() {
  json arr = json::array();
  for (const auto& a : list_attacks()) arr.push_back(attack_to_json(a));
  return arr;
}

// ---------------------------------------------------------------------------
// Paraphrasing

// Removes a leading "OUTPUT:" label in its common spellings
// ("OUTPUT:", "'OUTPUT':", "‘OUTPUT’:", "**Output:**", ...).
inline std::string strip_output_scaffold(std::string_view raw) {
  static const std::regex tag(R"(^\s*(?:\*\*)?(?:'|"|‘|’)?OUTPUT(?:'|"|‘|’)?\s*:\s*(?:\*\*)?\s*)", std::regex::icase);
  std::string s(raw);
  std::smatch m;
  if (std::regex_search(s, m, tag)) s.erase(0, static_cast<std::size_t>(m.length(0)));
  return std::string(text::trim(s));
}

// Asks the paraphraser to reformulate `fake_text`; returns its OUTPUT cut to
// 500 characters.
inline std::string paraphrase_attack(const std::string& fake_text, GeneratorBackend& paraphraser,
                                     const GenerationParams& params = {}, const RetryPolicy& retry = {}) {
  GenerationRequest req{render_prompt(paraphrase_template(), fake_text), params, std::nullopt};
  if (!paraphraser.capabilities().supports_system_prompt) {
    std::erase_if(req.prompt.messages, [](const ChatMessage& m) { return m.role == "system"; });
  }
  const std::string raw = with_retry(retry, [&] { return paraphraser.complete(req); });
  const std::string out = strip_output_scaffold(raw);
  if (out.empty()) throw ParaphraseError("paraphraser returned no text");
  if (text::codepoint_count(out) < kSampleChars) {
    throw ParaphraseError("paraphrase has " + std::to_string(text::codepoint_count(out)) + " characters, need 500");
  }
  return truncate_to_500(out);
}

// ---------------------------------------------------------------------------
// Applying attacks

struct AttackOptions {
  // Baseline generation setup; attacks override parts of it.
  PromptTemplate base_template = default_chat_template();
  GenerationParams base_params{};
  // Used to size min_new_tokens = ceil(500 / chars_per_token) so regenerated
  // samples reach 500 characters. Unset means 200 tokens.
  std::optional<double> avg_chars_per_token;
  std::size_t concurrency = 1;
  double max_failure_fraction = 0.02;
  RetryPolicy retry{};
  // Optional per-(pair, spec) result cache for resuming interrupted runs.
  std::optional<std::filesystem::path> cache_dir;
};

inline int min_new_tokens_for(const AttackOptions& opts) {
  int n = opts.avg_chars_per_token
              ? static_cast<int>(std::ceil(static_cast<double>(kSampleChars) / *opts.avg_chars_per_token))
              : 200;
  return std::min(n, opts.base_params.max_new_tokens);
}

// Exact generation parameters an attack regenerates with.
inline GenerationParams attack_params(const AttackSpec& spec, const AttackOptions& opts) {
  GenerationParams p = spec.param_overrides.apply(opts.base_params);
  p.min_new_tokens = min_new_tokens_for(opts);
  return p;
}

// Regenerates the machine side of `base`'s test split under `spec`. For
// paraphrase, `backend` is the paraphraser and rewrites the baseline machine
// text; otherwise it is the generator and starts from each pair's prefix.
inline PairedDataset apply_attack(const AttackSpec& spec, const PairedDataset& base, GeneratorBackend& backend,
                                  const AttackOptions& opts = {}) {
  auto test_it = base.splits.find(Split::test);
  if (test_it == base.splits.end() || test_it->second.empty()) throw AttackBuildError("base dataset has no test split");
  if (spec.attack_id == AttackId::paraphrase && !spec.paraphraser_backend) {
    throw ConfigError("paraphrase attack needs a paraphraser backend");
  }
  const PromptTemplate tpl = spec.template_override.value_or(opts.base_template);
  if (spec.template_override && spec.attack_id != AttackId::paraphrase && backend.kind() == PromptMode::completion) {
    throw ConfigError("prompt attack '" + std::string(to_string(spec.attack_id)) +
                           "' needs a chat backend, '" + backend.name() + "' is completion-only");
  }
  const GenerationParams params = attack_params(spec, opts);
  params.validate();

  struct Pair {
    const TextSample* human = nullptr;
    const TextSample* machine = nullptr;
  };
  std::map<std::string, Pair> pairs;
  for (const auto& s : base.samples) {
    if (!test_it->second.count(s.pair_id)) continue;
    (s.label == Label::human ? pairs[s.pair_id].human : pairs[s.pair_id].machine) = &s;
  }
  std::vector<std::string> ids;
  for (const auto& [pid, p] : pairs) {
    if (!p.human || !p.machine) throw AttackBuildError("pair '" + pid + "' is incomplete in the base dataset");
    ids.push_back(pid);
  }

  const std::string spec_key = sha256_hex(attack_to_json(spec).dump() + params.to_json().dump() + backend.name());
  std::map<std::string, std::string> regenerated;
  std::vector<Discard> failures;
  std::mutex mu;
  parallel_for(ids.size(), opts.concurrency, [&](std::size_t i) {
    const Pair& p = pairs.at(ids[i]);
    std::optional<std::filesystem::path> cached;
    if (opts.cache_dir) {
      cached = *opts.cache_dir / (sha256_hex(spec_key + ids[i]) + ".txt");
      if (std::filesystem::exists(*cached)) {
        auto t = fs::read_file(*cached);
        std::lock_guard lock(mu);
        regenerated[ids[i]] = std::move(t);
        return;
      }
    }
    try {
      std::string out;
      if (spec.attack_id == AttackId::paraphrase) {
        out = paraphrase_attack(p.machine->text, backend, params, opts.retry);
      } else {
        const auto words = text::split_words(p.human->text);
        if (words.size() < kPrefixWords) throw PrefixTooShort(ids[i], words.size());
        const std::string prefix = text::join({words.begin(), words.begin() + kPrefixWords}, " ");
        out = truncate_to_500(generate_continuation(backend, render_prompt(tpl, prefix), prefix, params, opts.retry).text);
      }
      if (cached) fs::atomic_write(*cached, out);
      std::lock_guard lock(mu);
      regenerated[ids[i]] = std::move(out);
    } catch (const Error& e) {
      std::lock_guard lock(mu);
      failures.push_back({ids[i], e.kind() + ": " + e.what()});
    }
  });

  if (static_cast<double>(failures.size()) > opts.max_failure_fraction * static_cast<double>(ids.size())) {
    throw AttackBuildError(std::to_string(failures.size()) + " of " + std::to_string(ids.size()) +
                           " regenerations failed for attack '" + to_string(spec.attack_id) + "'");
  }
  std::sort(failures.begin(), failures.end(), [](const Discard& a, const Discard& b) { return a.pair_id < b.pair_id; });

  PairedDataset out;
  out.dataset_id = base.dataset_id + "@" + to_string(spec.attack_id);
  out.generator = spec.attack_id == AttackId::paraphrase ? base.generator : backend.name();
  out.attack = to_string(spec.attack_id);
  out.seed = base.seed;
  out.calibration_locked = true;
  out.manifest.source_corpus = base.manifest.source_corpus;
  out.manifest.articles_in = ids.size();
  out.manifest.discards = failures;
  out.manifest.generation = {{"attack", attack_to_json(spec)},
                             {"generation_params", params.to_json()},
                             {"prompt_id", tpl.prompt_id},
                             {"backend", backend.describe()},
                             {"base_dataset", base.dataset_id}};
  out.splits[Split::test];
  for (const auto& s : base.samples) {
    auto r = regenerated.find(s.pair_id);
    if (r == regenerated.end()) continue;
    TextSample copy = s;
    if (s.label == Label::machine) {
      copy.text = r->second;
      copy.attack = to_string(spec.attack_id);
      copy.prompt_id = tpl.prompt_id;
      copy.generator = spec.attack_id == AttackId::paraphrase ? s.generator : std::optional(backend.name());
    }
    out.splits[Split::test].insert(s.pair_id);
    out.samples.push_back(std::move(copy));
  }
  return out;
}

}  // namespace mgtbench
