// Corpus construction, dataset files, generator backends and attacks.

#include <gtest/gtest.h>

#include <set>

#include "mgtbench/attacks.hpp"
#include "mgtbench/dataset_io.hpp"
#include "support.hpp"

using namespace mgtbench;
using testsupport::ScriptedBackend;
using testsupport::TempDir;

namespace {

std::string chars(std::size_t n, const std::string& unit = "x") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += unit;
  return s;
}

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

CleanArticle article(const std::string& id, const std::string& text) {
  return ingest_articles({{id, text}}, "t").front();
}

}  // namespace

// ---------------------------------------------------------------------------
// ingest / prefix / truncate

TEST(Ingest, StripsCnnDateline) {
  const auto out = ingest_articles({{"a1", "(CNN) -- Former Vice President Dick Cheney on Sunday defended"}}, "cnn");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].text, "Former Vice President Dick Cheney on Sunday defended");
  EXPECT_EQ(out[0].article_id, "a1");
  EXPECT_EQ(out[0].source_tag, "cnn");
}

TEST(Ingest, StripsLocationDatelineAndByline) {
  EXPECT_EQ(article("a", "ATLANTA, Georgia (CNN) -- The storm hit.").text, "The storm hit.");
  EXPECT_EQ(article("a", "WASHINGTON (CNN) — Lawmakers met.").text, "Lawmakers met.");
  EXPECT_EQ(article("a", "By Jane Doe, CNN\nThe vote passed.").text, "The vote passed.");
  EXPECT_EQ(article("a", "By Jane Doe, CNN -- (CNN) -- Nested headers go.").text, "Nested headers go.");
}

TEST(Ingest, LeavesPlainBodyAlone) {
  EXPECT_EQ(article("a2", "Plain body with no header.").text, "Plain body with no header.");
  EXPECT_EQ(article("a3", "The mayor (a Democrat) -- reportedly -- left.").text, "The mayor (a Democrat) -- reportedly -- left.");
}

TEST(Ingest, EmptyInputAndEmptyRecords) {
  EXPECT_TRUE(ingest_articles({}, "t").empty());
  try {
    ingest_articles({{"ok", "fine text"}, {"bad-7", "   "}}, "t");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("bad-7"), std::string::npos);
  }
}

TEST(Ingest, FlagsShortArticlesAndPreservesOrder) {
  const auto out = ingest_articles({{"b", chars(499)}, {"a", chars(500)}, {"c", "short"}}, "t");
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].article_id, "b");
  EXPECT_TRUE(out[0].too_short);
  EXPECT_FALSE(out[1].too_short);
  EXPECT_TRUE(out[2].too_short);
}

TEST(Prefix, TenWordsFromNewsLead) {
  const auto p = extract_prefix(article("x", "Former Vice President Dick Cheney on Sunday defended the Bush administration's economic record"));
  const std::vector<std::string> want{"Former", "Vice", "President", "Dick", "Cheney", "on", "Sunday", "defended", "the", "Bush"};
  EXPECT_EQ(p.words, want);
  EXPECT_EQ(p.origin_article_id, "x");
  EXPECT_EQ(p.joined(), "Former Vice President Dick Cheney on Sunday defended the Bush");
}

TEST(Prefix, Boundaries) {
  EXPECT_EQ(extract_prefix(article("x", words(10))).words.size(), 10u);
  try {
    extract_prefix(article("nine", words(9)));
    FAIL();
  } catch (const PrefixTooShort& e) {
    EXPECT_EQ(e.article_id(), "nine");
  }
}

TEST(Prefix, UnicodeWhitespaceRuns) {
  const auto p = extract_prefix(article("u", "a b\tc\n\nd  e f g h i j k"));
  EXPECT_EQ(p.joined(), "a b c d e f g h i j");
}

TEST(Truncate, CountsCodePoints) {
  EXPECT_EQ(truncate_to_500(chars(600)), chars(500));
  EXPECT_EQ(truncate_to_500(chars(500)), chars(500));
  EXPECT_THROW(truncate_to_500(chars(499)), TooShort);
  const std::string e = chars(600, "é");  // two bytes each
  const auto t = truncate_to_500(e);
  EXPECT_EQ(t.size(), 1000u);
  EXPECT_EQ(text::codepoint_count(t), 500u);
  EXPECT_THROW(truncate_to_500(chars(499, "\U0001F600")), TooShort);
}

// ---------------------------------------------------------------------------
// pairing, splitting, round robin

TEST(Pairing, DiscardsShortMachineText) {
  const auto arts = ingest_articles({{"a", chars(600)}, {"b", chars(700)}, {"c", chars(520)}}, "t");
  const std::map<std::string, std::string> gen{{"a", chars(600, "m")}, {"b", chars(450, "m")}, {"c", chars(500, "m")}};
  const auto ds = build_paired_dataset(arts, gen, 1, {"d", "g", "t", std::nullopt});
  EXPECT_EQ(ds.pair_count(), 2u);
  EXPECT_EQ(ds.samples.size(), 4u);
  ASSERT_EQ(ds.manifest.discards.size(), 1u);
  EXPECT_EQ(ds.manifest.discards[0].pair_id, "p-b");
  EXPECT_EQ(ds.manifest.discards[0].reason, "machine_too_short");
  EXPECT_TRUE(check_integrity(ds).empty());
}

TEST(Pairing, MissingGenerationsAndShortHumans) {
  const auto arts = ingest_articles({{"a", chars(600)}, {"b", chars(300)}, {"c", chars(600)}}, "t");
  const auto ds = build_paired_dataset(arts, {{"a", chars(600, "m")}, {"b", chars(600, "m")}}, 1, {"d", "g", "t", std::nullopt});
  EXPECT_EQ(ds.pair_count(), 1u);
  EXPECT_EQ(ds.manifest.missing_generation, 1u);
  ASSERT_EQ(ds.manifest.discards.size(), 1u);
  EXPECT_EQ(ds.manifest.discards[0].reason, "human_too_short");
  EXPECT_THROW(build_paired_dataset(arts, {{"zzz", chars(600)}}, 1, {"d", "g", "t", std::nullopt}), InputError);
}

TEST(Pairing, WithinPairOrderFollowsSeed) {
  std::vector<RawRecord> recs;
  std::map<std::string, std::string> gen;
  for (int i = 0; i < 64; ++i) {
    recs.push_back({"a" + std::to_string(i), chars(600)});
    gen["a" + std::to_string(i)] = chars(600, "m");
  }
  const auto arts = ingest_articles(recs, "t");
  const auto d1 = build_paired_dataset(arts, gen, 3, {"d", "g", "t", std::nullopt});
  const auto d2 = build_paired_dataset(arts, gen, 3, {"d", "g", "t", std::nullopt});
  const auto d3 = build_paired_dataset(arts, gen, 4, {"d", "g", "t", std::nullopt});
  EXPECT_EQ(d1, d2);
  std::size_t machine_first = 0;
  for (std::size_t i = 0; i < d1.samples.size(); i += 2) machine_first += d1.samples[i].label == Label::machine;
  EXPECT_GT(machine_first, 10u);
  EXPECT_LT(machine_first, 54u);
  EXPECT_NE(d1.samples, d3.samples);
}

TEST(Apportion, HandEnumeratedCases) {
  EXPECT_EQ(apportion(10, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{8, 1, 1}));
  // 7 * (0.8, 0.1, 0.1) = (5.6, 0.7, 0.7); floors (5, 0, 0) leave 2; the two
  // largest remainders are the 0.7s.
  EXPECT_EQ(apportion(7, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{5, 1, 1}));
  // 3 * = (2.4, 0.3, 0.3): one left over, goes to a 0.4 remainder -> (3, 0, 0),
  // then the non-empty rule moves one each to eval and test.
  EXPECT_EQ(apportion(3, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_EQ(apportion(2, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{2, 0, 0}));
  EXPECT_EQ(apportion(0, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_THROW(apportion(10, {0.8, 0.1, 0.2}), ConfigError);
  EXPECT_THROW(apportion(10, {0.8, 0.1, 0.1 - 1e-6}), ConfigError);
}

TEST(Apportion, PropertiesOverManyTotals) {
  const std::vector<std::vector<double>> fracs{{0.8, 0.1, 0.1}, {0.7, 0.15, 0.15}, {0.5, 0.5, 0.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  for (const auto& f : fracs) {
    for (std::size_t n = 0; n <= 300; ++n) {
      const auto c = apportion(n, f);
      std::size_t sum = 0;
      for (std::size_t i = 0; i < c.size(); ++i) {
        sum += c[i];
        if (f[i] == 0.0) EXPECT_EQ(c[i], 0u);
        if (n >= 10) EXPECT_LE(std::abs(static_cast<double>(c[i]) - f[i] * n), 1.0 + 1e-9) << n;
        if (n >= 3 && f[i] > 0) EXPECT_GT(c[i], 0u) << n;
      }
      EXPECT_EQ(sum, n);
    }
  }
}

TEST(Split, PairCohesionBalanceAndDeterminism) {
  ScriptedBackend be("scripted", PromptMode::chat);
  const auto ds = testsupport::build_dataset(be, 60);
  EXPECT_TRUE(check_integrity(ds).empty());
  const auto n = ds.pair_count();
  const auto want = apportion(n, {0.8, 0.1, 0.1});
  EXPECT_EQ(ds.splits.at(Split::train).size(), want[0]);
  EXPECT_EQ(ds.splits.at(Split::eval).size(), want[1]);
  EXPECT_EQ(ds.splits.at(Split::test).size(), want[2]);

  auto shuffled = ds;
  std::reverse(shuffled.samples.begin(), shuffled.samples.end());
  EXPECT_EQ(split_dataset(shuffled, 5).splits, ds.splits);
  EXPECT_NE(split_dataset(ds, 6).splits, ds.splits);
  EXPECT_THROW(split_dataset(ds, 5, {0.5, 0.5, 0.5}), ConfigError);
}

TEST(RoundRobin, DrawsWholePairsPerSource) {
  ScriptedBackend a("a", PromptMode::chat), b("b", PromptMode::chat), c("c", PromptMode::chat);
  const auto da = testsupport::build_dataset(a, 30, 1, "da");
  const auto db = testsupport::build_dataset(b, 30, 2, "db");
  const auto dc = testsupport::build_dataset(c, 30, 3, "dc");
  const auto mix = build_round_robin({da, db, dc}, 2, 9);
  EXPECT_EQ(mix.pair_count(), 6u);
  EXPECT_TRUE(check_integrity(mix).empty());
  std::map<std::string, int> per_source;
  for (const auto& s : mix.samples) {
    if (s.label == Label::machine) ++per_source[*s.generator];
  }
  EXPECT_EQ(per_source, (std::map<std::string, int>{{"a", 2}, {"b", 2}, {"c", 2}}));
  for (const auto& s : mix.samples) {
    const auto src = s.pair_id.substr(0, 2);
    const auto& from = src == "da" ? da : src == "db" ? db : dc;
    EXPECT_EQ(from.split_of(s.pair_id.substr(3)), Split::train) << s.pair_id;
  }
  EXPECT_EQ(build_round_robin({da, db, dc}, 2, 9), mix);
  try {
    build_round_robin({da, db, dc}, 1000, 9);
    FAIL();
  } catch (const InsufficientData& e) {
    EXPECT_NE(std::string(e.what()).find("da"), std::string::npos);
  }
}

TEST(Dataset, JsonlRoundTripIsByteStable) {
  ScriptedBackend be("scripted", PromptMode::chat);
  const auto ds = testsupport::build_dataset(be, 25);
  TempDir tmp;
  save_dataset(ds, tmp / "d");
  const auto back = load_dataset(tmp / "d");
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.splits, ds.splits);
  EXPECT_EQ(back.manifest, ds.manifest);
  EXPECT_EQ(samples_to_jsonl(back), fs::read_file(tmp / "d" / "samples.jsonl"));

  const auto line = nlohmann::json::parse(samples_to_jsonl(ds).substr(0, samples_to_jsonl(ds).find('\n')));
  for (const char* k : {"sample_id", "pair_id", "text", "label", "generator", "attack", "prompt_id", "split"}) {
    EXPECT_TRUE(line.contains(k)) << k;
  }
  auto m = nlohmann::json::parse(fs::read_file(tmp / "d" / "manifest.json"));
  m["schema_version"] = 99;
  fs::atomic_write(tmp / "d" / "manifest.json", m.dump());
  EXPECT_THROW(load_dataset(tmp / "d"), VersionError);
}

TEST(Dataset, PrefixConsistency) {
  auto be = testsupport::ngram_backend("a", 11, PromptMode::chat);
  const auto ds = testsupport::build_dataset(*be, 30);
  ASSERT_GT(ds.pair_count(), 20u);
  std::map<std::string, std::string> human_prefix;
  for (const auto& s : ds.samples) {
    if (s.label == Label::human) human_prefix[s.pair_id] = extract_prefix(CleanArticle{"x", s.text, "t"}).joined();
  }
  for (const auto& s : ds.samples) {
    if (s.label == Label::machine) EXPECT_TRUE(text::starts_with(s.text, human_prefix.at(s.pair_id))) << s.pair_id;
  }
}

// ---------------------------------------------------------------------------
// prompts and backends

TEST(Prompt, DefaultChatTemplate) {
  const auto r = render_prompt(default_chat_template(), "P");
  ASSERT_EQ(r.messages.size(), 2u);
  EXPECT_EQ(r.messages[0], (ChatMessage{"system", "You are a helpful assistant."}));
  EXPECT_EQ(r.messages[1], (ChatMessage{"user", "Continue to write this news article: P"}));
  EXPECT_EQ(render_prompt(completion_template(), "P").prompt, "P");
}

TEST(Prompt, PlaceholderRules) {
  EXPECT_THROW(render_prompt({"x", std::nullopt, "no slot", PromptMode::chat}, "P"), TemplateError);
  EXPECT_THROW(render_prompt({"x", std::nullopt, "{prefix} {prefix}", PromptMode::chat}, "P"), TemplateError);
  EXPECT_THROW(render_prompt({"x", "sys", "{prefix}", PromptMode::completion}, "P"), TemplateError);
  // Substitution is verbatim, even when the text itself looks like a slot.
  EXPECT_EQ(render_prompt({"x", std::nullopt, "<{prefix}>", PromptMode::chat}, "{fake_text} $1").messages[0].content,
            "<{fake_text} $1>");
}

TEST(Generation, ForcedPrefixAndFallbackPaths) {
  const std::string prefix = "A B C D E F G H I J";
  ScriptedBackend forced("f", PromptMode::chat);
  auto c = generate_continuation(forced, render_prompt(default_chat_template(), prefix), prefix, {});
  EXPECT_TRUE(text::starts_with(c.text, prefix));
  EXPECT_EQ(c.path, PrefixPath::forced);
  EXPECT_EQ(forced.last.forced_prefix, prefix);

  ScriptedBackend chatty("c", PromptMode::chat);
  chatty.caps.supports_forced_prefix = false;
  c = generate_continuation(chatty, render_prompt(default_chat_template(), prefix), prefix, {});
  EXPECT_TRUE(text::starts_with(c.text, prefix));
  EXPECT_EQ(c.path, PrefixPath::prepended);
  EXPECT_FALSE(chatty.last.forced_prefix);
}

TEST(Generation, ParamsPassThroughUnchanged) {
  ScriptedBackend spy("spy", PromptMode::chat);
  GenerationParams p;
  p.temperature = 0.7;
  p.repetition_penalty = 1.3;
  p.max_new_tokens = 200;
  p.min_new_tokens = 17;
  p.seed = 99;
  generate_continuation(spy, render_prompt(default_chat_template(), "x y"), "x y", p);
  EXPECT_EQ(spy.last.params, p);
  EXPECT_EQ(spy.last.params.max_new_tokens, 200);
}

TEST(Generation, ModeLaws) {
  ScriptedBackend comp("comp", PromptMode::completion);
  generate_continuation(comp, render_prompt(default_chat_template(), "P Q"), "P Q", {});
  EXPECT_EQ(comp.last.prompt.mode, PromptMode::completion);
  EXPECT_EQ(comp.last.prompt.prompt, "P Q");
  EXPECT_TRUE(comp.last.prompt.messages.empty());

  ScriptedBackend nosys("g", PromptMode::chat);
  nosys.caps.supports_system_prompt = false;
  generate_continuation(nosys, render_prompt(default_chat_template(), "P"), "P", {});
  ASSERT_EQ(nosys.last.prompt.messages.size(), 1u);
  EXPECT_EQ(nosys.last.prompt.messages[0].role, "user");
}

TEST(Generation, InvalidParamsRejected) {
  GenerationParams p;
  p.temperature = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.repetition_penalty = 0.9;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.min_new_tokens = 300;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Generation, LocalBackendDeterministicAcrossThreads) {
  auto be = testsupport::ngram_backend("b", 12);
  const auto articles = ingest_articles(testsupport::human_records(20), "t");
  std::vector<Prefix> prefixes;
  for (const auto& a : articles) prefixes.push_back(extract_prefix(a));
  GenerationParams gp;
  gp.seed = 4;
  gp.max_new_tokens = 60;
  const auto one = generate_corpus(*be, prefixes, completion_template(), gp, {1});
  const auto many = generate_corpus(*be, prefixes, completion_template(), gp, {8});
  EXPECT_EQ(one.texts, many.texts);
  gp.seed = 5;
  EXPECT_NE(generate_corpus(*be, prefixes, completion_template(), gp, {1}).texts, one.texts);
}

TEST(Generation, CorpusFailureThreshold) {
  std::vector<Prefix> prefixes;
  for (int i = 0; i < 100; ++i) prefixes.push_back({{"w" + std::to_string(i)}, "a" + std::to_string(i)});
  ScriptedBackend be;
  be.retryable_failures = true;
  be.fail_if = [](const GenerationRequest& r) { return r.prompt.prompt == "w13"; };
  CorpusOptions o{4, 0.02, testsupport::fast_retry()};
  const auto res = generate_corpus(be, {prefixes.begin(), prefixes.begin() + 3}, completion_template(), {}, o);
  EXPECT_EQ(res.texts.size(), 3u);

  const auto partial = generate_corpus(be, prefixes, completion_template(), {}, o);
  EXPECT_EQ(partial.texts.size(), 99u);
  ASSERT_EQ(partial.failures.size(), 1u);
  EXPECT_EQ(partial.failures[0].article_id, "a13");
  EXPECT_EQ(be.calls.load(), 3 + 100 + 2);  // the failing item was tried three times

  be.retryable_failures = false;
  be.fail_if = [](const GenerationRequest& r) { return r.prompt.prompt.back() == '7' && r.prompt.prompt.size() == 3; };
  try {
    generate_corpus(be, prefixes, completion_template(), {}, o);
    FAIL();
  } catch (const CorpusGenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("a17"), std::string::npos);
  }
  EXPECT_THROW(generate_corpus(be, {}, completion_template(), {}, o), InputError);
}

TEST(Generation, RetryOnlyRetryableWithBackoff) {
  std::vector<long> sleeps;
  RetryPolicy r;
  r.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  int n = 0;
  EXPECT_THROW(with_retry(r, [&]() -> int { ++n; throw BackendError("t", true); }), BackendError);
  EXPECT_EQ(n, 3);
  EXPECT_EQ(sleeps, (std::vector<long>{1000, 2000}));
  n = 0;
  EXPECT_THROW(with_retry(r, [&]() -> int { ++n; throw BackendError("t", false); }), BackendError);
  EXPECT_EQ(n, 1);
  n = 0;
  EXPECT_EQ(with_retry(r, [&] { return ++n < 2 ? throw BackendError("t", true), 0 : 7; }), 7);
}

TEST(Generation, LocalContextOverflow) {
  auto be = testsupport::ngram_backend("a", 11);
  GenerationParams p;
  p.max_new_tokens = 2047;
  EXPECT_THROW(be->complete({render_prompt(completion_template(), "one two three"), p, std::nullopt}), InputTooLong);
}

TEST(RemoteBackend, WireContractAndStatusMapping) {
  nlohmann::json seen;
  std::atomic<int> hits{0};
  testsupport::MockServer srv([&](const httplib::Request& req, httplib::Response& res) {
    const int k = hits++;
    seen = nlohmann::json::parse(req.body);
    if (k == 0) {
      res.status = 503;
      return;
    }
    res.set_content(nlohmann::json{{"text", "hello world"}}.dump(), "application/json");
  });
  RemoteBackendOptions o;
  o.name = "remote";
  o.endpoint = srv.url();
  o.capabilities = {true, true, 2};
  RemoteBackend be(o);
  GenerationParams p;
  p.temperature = 1.2;
  p.seed = 3;
  const auto c = generate_continuation(be, render_prompt(default_chat_template(), "hello"), "hello", p, testsupport::fast_retry());
  EXPECT_EQ(c.text, "hello world");
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(seen["temperature"], 1.2);
  EXPECT_EQ(seen["repetition_penalty"], 1.0);
  EXPECT_EQ(seen["max_new_tokens"], 200);
  EXPECT_EQ(seen["seed"], 3);
  EXPECT_EQ(seen["forced_prefix"], "hello");
  EXPECT_EQ(seen["messages"][1]["content"], "Continue to write this news article: hello");
  EXPECT_FALSE(seen.contains("prompt"));
}

TEST(RemoteBackend, ErrorsAreClassified) {
  std::atomic<int> status{400};
  testsupport::MockServer srv([&](const httplib::Request&, httplib::Response& res) {
    res.status = status.load();
    res.set_content(status == 400 ? "{\"error\":\"context_length exceeded\"}" : "{}", "application/json");
  });
  RemoteBackend be({"r", PromptMode::completion, srv.url(), {}, std::chrono::seconds(5)});
  GenerationRequest req{render_prompt(completion_template(), "x"), {}, std::nullopt};
  EXPECT_THROW(be.complete(req), InputTooLong);
  status = 429;
  try {
    be.complete(req);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
  }
  status = 401;
  try {
    be.complete(req);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_FALSE(e.retryable());
  }
  status = 200;
  EXPECT_THROW(be.complete(req), BackendError);  // no "text" field
}

TEST(RemoteBackend, TimeoutIsRetryable) {
  testsupport::MockServer srv([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    res.set_content("{\"text\":\"late\"}", "application/json");
  });
  RemoteBackend be({"r", PromptMode::completion, srv.url(), {}, std::chrono::milliseconds(50)});
  try {
    be.complete({render_prompt(completion_template(), "x"), {}, std::nullopt});
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

// ---------------------------------------------------------------------------
// attacks

TEST(Attacks, CatalogEntries) {
  const auto cat = list_attacks();
  ASSERT_EQ(cat.size(), 7u);
  std::set<std::string> ids;
  for (const auto& a : cat) ids.insert(to_string(a.attack_id));
  EXPECT_EQ(ids, (std::set<std::string>{"none", "high_temperature", "repetition_penalty", "news_prompt", "tweet_prompt",
                                        "example_prompt", "paraphrase"}));
  EXPECT_NE(find_attack("news_prompt").template_override->system->find("You are an intern news writer for CNN"), std::string::npos);
  EXPECT_NE(find_attack("example_prompt").template_override->user.find("<ARTICLE_START>"), std::string::npos);
  EXPECT_EQ(find_attack("tweet_prompt").template_override->user, "Write a 500 characters news tweet starting with: {prefix}");
  EXPECT_THROW(find_attack("rot13"), ConfigError);
  const auto j = attack_catalog_json();
  EXPECT_EQ(j.size(), 7u);
  EXPECT_EQ(j[1]["param_overrides"], (nlohmann::json{{"temperature", 1.2}}));
}

TEST(Attacks, DecodingAttacksTouchOneKnob) {
  GenerationParams base;
  base.seed = 1;
  const auto hot = find_attack("high_temperature").param_overrides.apply(base);
  const auto rep = find_attack("repetition_penalty").param_overrides.apply(base);
  auto only = [&](const GenerationParams& p) {
    int diffs = (p.temperature != base.temperature) + (p.repetition_penalty != base.repetition_penalty) +
                (p.max_new_tokens != base.max_new_tokens) + (p.min_new_tokens != base.min_new_tokens) + (p.seed != base.seed);
    return diffs;
  };
  EXPECT_EQ(hot.temperature, 1.2);
  EXPECT_EQ(only(hot), 1);
  EXPECT_EQ(rep.repetition_penalty, 1.2);
  EXPECT_EQ(only(rep), 1);
  EXPECT_FALSE(find_attack("high_temperature").template_override);
}

struct AttackFixture : ::testing::Test {
  void SetUp() override {
    base = testsupport::build_dataset(chat, 40);
    opts.base_params.seed = 5;
    opts.avg_chars_per_token = 5.0;
    opts.retry = testsupport::fast_retry();
  }
  std::multiset<std::string> humans(const PairedDataset& ds, bool test_only) {
    std::multiset<std::string> out;
    for (const auto& s : ds.samples) {
      if (s.label == Label::human && (!test_only || ds.split_of(s.pair_id) == Split::test)) out.insert(s.text);
    }
    return out;
  }
  ScriptedBackend chat{"chatgen", PromptMode::chat};
  PairedDataset base;
  AttackOptions opts;
};

TEST_F(AttackFixture, HumanFixityAndTagging) {
  for (const auto& spec : list_attacks("para")) {
    ScriptedBackend para("para", PromptMode::chat);
    auto& be = spec.attack_id == AttackId::paraphrase ? para : chat;
    const auto out = apply_attack(spec, base, be, opts);
    EXPECT_EQ(humans(out, false), humans(base, true)) << to_string(spec.attack_id);
    EXPECT_TRUE(out.calibration_locked);
    EXPECT_TRUE(check_integrity(out).empty());
    EXPECT_EQ(out.splits.at(Split::test), base.splits.at(Split::test));
    for (const auto& s : out.samples) {
      if (s.label == Label::machine) EXPECT_EQ(s.attack, to_string(spec.attack_id));
    }
  }
}

TEST_F(AttackFixture, RegenerationUsesSpecAndMinTokens) {
  const auto out = apply_attack(find_attack("high_temperature"), base, chat, opts);
  EXPECT_EQ(chat.last.params.temperature, 1.2);
  EXPECT_EQ(chat.last.params.min_new_tokens, 100);  // ceil(500 / 5.0)
  const auto& g = out.manifest.generation;
  EXPECT_EQ(g["generation_params"]["temperature"], 1.2);
  EXPECT_EQ(g["base_dataset"], "mock");

  apply_attack(find_attack("tweet_prompt"), base, chat, opts);
  ASSERT_EQ(chat.last.prompt.messages.size(), 2u);
  EXPECT_TRUE(text::starts_with(chat.last.prompt.messages[1].content, "Write a 500 characters news tweet starting with: "));
  EXPECT_NE(chat.last.prompt.messages[0].content, "You are a helpful assistant.");
  EXPECT_EQ(chat.last.params.temperature, 1.0);
}

TEST_F(AttackFixture, PromptAttackNeedsChatBackend) {
  ScriptedBackend comp("comp", PromptMode::completion);
  EXPECT_THROW(apply_attack(find_attack("news_prompt"), base, comp, opts), ConfigError);
  auto spec = find_attack("paraphrase");
  spec.paraphraser_backend.reset();
  EXPECT_THROW(apply_attack(spec, base, chat, opts), ConfigError);
}

TEST_F(AttackFixture, FailuresBecomeDiscardsUntilThreshold) {
  int k = 0;
  chat.fail_if = [&](const GenerationRequest&) { return k++ == 0; };
  opts.max_failure_fraction = 0.5;
  const auto out = apply_attack(find_attack("none"), base, chat, opts);
  EXPECT_EQ(out.manifest.discards.size(), 1u);
  EXPECT_EQ(out.pair_count() + 1, base.splits.at(Split::test).size());
  chat.fail_if = [](const GenerationRequest&) { return true; };
  EXPECT_THROW(apply_attack(find_attack("none"), base, chat, opts), AttackBuildError);
}

TEST_F(AttackFixture, CacheMakesReapplyFree) {
  TempDir tmp;
  opts.cache_dir = tmp.path();
  const auto first = apply_attack(find_attack("repetition_penalty"), base, chat, opts);
  const int calls = chat.calls.load();
  const auto again = apply_attack(find_attack("repetition_penalty"), base, chat, opts);
  EXPECT_EQ(chat.calls.load(), calls);
  EXPECT_EQ(first, again);
}

TEST(Paraphrase, PromptAndScaffoldStripping) {
  ScriptedBackend echo("echo", PromptMode::chat);
  const std::string fake = chars(500, "f");
  struct Echo : GeneratorBackend {
    std::string reply;
    GenerationRequest seen;
    std::string name() const override { return "echo"; }
    PromptMode kind() const override { return PromptMode::chat; }
    BackendCapabilities capabilities() const override { return {false, true, 0}; }
    std::string complete(const GenerationRequest& r) override {
      seen = r;
      return reply.empty() ? r.prompt.messages.back().content.substr(7) : reply;
    }
  } be;
  EXPECT_EQ(paraphrase_attack(fake, be), truncate_to_500(fake));
  EXPECT_EQ(be.seen.prompt.messages.back().content, "INPUT: " + fake);
  EXPECT_EQ(be.seen.prompt.messages.front().role, "system");

  const std::string body = chars(520, "b");
  for (const std::string raw : {"OUTPUT: " + body, "**OUTPUT:** " + body, "‘OUTPUT’: " + body, "  output:" + body}) {
    be.reply = raw;
    EXPECT_EQ(paraphrase_attack(fake, be), chars(500, "b")) << raw;
  }
  be.reply = "OUTPUT:   ";
  EXPECT_THROW(paraphrase_attack(fake, be), ParaphraseError);
  be.reply = "OUTPUT: too short";
  EXPECT_THROW(paraphrase_attack(fake, be), ParaphraseError);
}
