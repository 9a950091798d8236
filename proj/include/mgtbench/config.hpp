#pragma once

// Experiment configuration. A JSON document with a schema_version; relative
// paths resolve against the directory of the config file.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/attacks.hpp"
#include "mgtbench/digest.hpp"
#include "mgtbench/errors.hpp"
#include "mgtbench/evaluation.hpp"
#include "mgtbench/fsutil.hpp"
#include "mgtbench/generation.hpp"
#include "mgtbench/training.hpp"

namespace mgtbench {

inline constexpr int kConfigSchemaVersion = 1;

// Either a JSONL file of {id, text} or a generated corpus.
struct CorpusSpec {
  std::string name;
  std::optional<std::filesystem::path> path;
  std::string synthetic_register;
  std::size_t synthetic_articles = 0;
  std::uint64_t synthetic_seed = 0;
  nlohmann::json raw;  // as written, for stage hashing
};

struct GeneratorSpec {
  std::string name;
  std::string type;  // ngram | remote
  PromptMode kind = PromptMode::completion;
  bool supports_forced_prefix = false;
  bool supports_system_prompt = true;
  std::size_t max_concurrency = 0;
  // ngram
  std::vector<CorpusSpec> train;
  double lambda = 0.9;
  double top_p = 1.0;
  double eos_probability = 0.0;
  // remote
  std::string endpoint;
  std::chrono::milliseconds timeout{120000};
  nlohmann::json raw;
};

struct LanguageModelSpec {
  std::string name;
  std::vector<CorpusSpec> train;
  std::vector<CorpusSpec> vocab;  // extra texts whose words join the vocabulary
  double lambda = 0.9;
  nlohmann::json raw;
};

struct DetectorSpec {
  std::string id;
  std::string type;  // trained | curvature | remote | synthetic
  std::string calibration_dataset;
  // trained
  std::string train_dataset;
  TrainConfig train;
  // curvature
  std::string scoring_model, reference_model;
  std::string estimator = "analytic";
  std::size_t n_samples = 10000;
  // remote
  std::string endpoint;
  std::string version;
  std::size_t max_concurrency = 4;
  // synthetic
  double machine_mean = 0.8, human_mean = 0.2, sd = 0.1;
  std::uint64_t seed = 0;
  nlohmann::json raw;
};

struct HumanOnlySpec {
  std::string name;
  CorpusSpec corpus;
  std::size_t limit = 0;  // 0 = all
};

struct ExperimentConfig {
  std::filesystem::path base_dir;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  CalibrationOptions calibration{};
  double ci_level = 0.95;
  CiMethod ci_method = CiMethod::wald;
  std::size_t generation_concurrency = 1;
  std::size_t scoring_concurrency = 1;
  double max_failure_fraction = 0.02;
  CorpusSpec corpus;
  SplitFractions splits{};
  PromptTemplate prompt = default_chat_template();
  GenerationParams generation{};
  std::optional<double> avg_chars_per_token;
  std::vector<GeneratorSpec> generators;
  std::optional<std::vector<std::string>> round_robin_sources;
  std::size_t round_robin_pairs = 0;
  std::string round_robin_id = "round_robin";
  std::vector<std::string> attack_targets;
  std::vector<std::string> attack_ids;
  std::optional<std::string> paraphraser;
  std::vector<LanguageModelSpec> language_models;
  std::vector<CorpusSpec> pretrain_corpora;
  PretrainConfig pretrain{};
  std::optional<CorpusSpec> probes_path;
  std::size_t synthetic_probes = 0;
  std::string probes_register = "human";
  std::uint64_t probes_seed = 0;
  std::vector<DetectorSpec> detectors;
  std::vector<HumanOnlySpec> human_only;
  RetryPolicy retry{};
  nlohmann::json raw;

  const GeneratorSpec& generator(const std::string& name) const {
    for (const auto& g : generators) if (g.name == name) return g;
    throw ConfigError("unknown generator '" + name + "'");
  }
  const DetectorSpec& detector(const std::string& id) const {
    for (const auto& d : detectors) if (d.id == id) return d;
    throw ConfigError("unknown detector '" + id + "'");
  }
  const LanguageModelSpec& language_model(const std::string& name) const {
    for (const auto& m : language_models) if (m.name == name) return m;
    throw ConfigError("unknown language model '" + name + "'");
  }
  // Every dataset the build stage produces, in build order.
  std::vector<std::string> dataset_ids() const {
    std::vector<std::string> out;
    for (const auto& g : generators) out.push_back(g.name);
    if (round_robin_sources) out.push_back(round_robin_id);
    return out;
  }
  std::string hash() const { return sha256_hex(raw.dump()); }
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline std::string need_string(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
    throw ConfigError(where + ": missing string '" + key + "'");
  }
  return j[key].get<std::string>();
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline CorpusSpec parse_corpus(const nlohmann::json& j, const std::filesystem::path& base, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": corpus must be an object");
  CorpusSpec c;
  c.raw = j;
  if (j.contains("path")) {
    c.path = resolve(base, need_string(j, "path", where));
    c.name = get_or<std::string>(j, "name", c.path->stem().string());
  } else if (j.contains("synthetic")) {
    const auto& s = j["synthetic"];
    c.synthetic_register = need_string(s, "register", where + ".synthetic");
    c.synthetic_articles = get_or<std::size_t>(s, "articles", 0);
    c.synthetic_seed = get_or<std::uint64_t>(s, "seed", 0);
    if (c.synthetic_articles == 0) throw ConfigError(where + ": synthetic corpus needs articles > 0");
    c.name = get_or<std::string>(j, "name", "synthetic-" + c.synthetic_register);
  } else {
    throw ConfigError(where + ": corpus needs 'path' or 'synthetic'");
  }
  return c;
}

inline std::vector<CorpusSpec> parse_corpora(const nlohmann::json& j, const std::filesystem::path& base,
                                             const std::string& where) {
  std::vector<CorpusSpec> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_corpus(j[i], base, where + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(parse_corpus(j, base, where));
  }
  return out;
}

inline PromptMode parse_mode(const std::string& s, const std::string& where) {
  if (s == "chat") return PromptMode::chat;
  if (s == "completion") return PromptMode::completion;
  throw ConfigError(where + ": kind must be 'chat' or 'completion'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const int version = get_or<int>(j, "schema_version", -1);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  }
  ExperimentConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.output_dir = detail::resolve(base_dir, get_or<std::string>(j, "output_dir", "out"));
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.calibration.target_fpr = get_or<double>(j, "target_fpr", 0.05);
  if (!(c.calibration.target_fpr > 0.0 && c.calibration.target_fpr < 1.0)) throw ConfigError("target_fpr must be in (0,1)");
  const auto rule = get_or<std::string>(j, "fpr_rule", "at_most");
  if (rule == "at_most") c.calibration.rule = FprRule::at_most;
  else if (rule == "closest") c.calibration.rule = FprRule::closest;
  else throw ConfigError("fpr_rule must be 'at_most' or 'closest'");
  const auto placement = get_or<std::string>(j, "threshold_placement", "at_score");
  if (placement == "at_score") c.calibration.placement = ThresholdPlacement::at_score;
  else if (placement == "midpoint") c.calibration.placement = ThresholdPlacement::midpoint;
  else throw ConfigError("threshold_placement must be 'at_score' or 'midpoint'");
  if (j.contains("ci")) {
    c.ci_level = get_or<double>(j["ci"], "level", 0.95);
    const auto m = get_or<std::string>(j["ci"], "method", "wald");
    if (m == "wald") c.ci_method = CiMethod::wald;
    else if (m == "wilson") c.ci_method = CiMethod::wilson;
    else throw ConfigError("ci.method must be 'wald' or 'wilson'");
  }
  if (j.contains("concurrency")) {
    c.generation_concurrency = get_or<std::size_t>(j["concurrency"], "generation", 1);
    c.scoring_concurrency = get_or<std::size_t>(j["concurrency"], "scoring", 1);
  }
  c.max_failure_fraction = get_or<double>(j, "max_failure_fraction", 0.02);
  if (j.contains("retry")) {
    c.retry.attempts = get_or<int>(j["retry"], "attempts", 3);
    c.retry.initial_backoff = std::chrono::milliseconds(get_or<long>(j["retry"], "initial_backoff_ms", 1000));
  }

  if (!j.contains("corpus")) throw ConfigError("config needs a 'corpus'");
  c.corpus = detail::parse_corpus(j["corpus"], base_dir, "corpus");
  if (j.contains("splits")) {
    const auto f = j["splits"].get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("splits must have three fractions (train, eval, test)");
    c.splits = {f[0], f[1], f[2]};
  }
  const auto prompt = get_or<std::string>(j, "prompt", "chat_default");
  if (prompt == "chat_default") c.prompt = default_chat_template();
  else if (prompt == "completion") c.prompt = completion_template();
  else throw ConfigError("prompt must be 'chat_default' or 'completion'");
  if (j.contains("generation")) {
    try {
      c.generation = GenerationParams::from_json(j["generation"]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("generation: ") + e.what());
    }
  }
  c.generation.validate();
  if (j.contains("avg_chars_per_token")) c.avg_chars_per_token = j["avg_chars_per_token"].get<double>();

  std::set<std::string> names;
  for (const auto& g : get_or<nlohmann::json>(j, "generators", nlohmann::json::array())) {
    GeneratorSpec s;
    s.raw = g;
    s.name = detail::need_string(g, "name", "generator");
    const std::string where = "generator '" + s.name + "'";
    if (!names.insert(s.name).second) throw ConfigError("duplicate generator name '" + s.name + "'");
    s.type = get_or<std::string>(g, "type", "ngram");
    s.kind = detail::parse_mode(get_or<std::string>(g, "kind", "completion"), where);
    s.supports_forced_prefix = get_or<bool>(g, "supports_forced_prefix", s.kind == PromptMode::chat);
    s.supports_system_prompt = get_or<bool>(g, "supports_system_prompt", true);
    s.max_concurrency = get_or<std::size_t>(g, "max_concurrency", 0);
    if (s.type == "ngram") {
      if (!g.contains("train")) throw ConfigError(where + ": ngram generator needs 'train' corpora");
      s.train = detail::parse_corpora(g["train"], base_dir, where + ".train");
      s.lambda = get_or<double>(g, "lambda", 0.9);
      s.top_p = get_or<double>(g, "top_p", 1.0);
      s.eos_probability = get_or<double>(g, "eos_probability", 0.0);
      if (!(s.top_p > 0.0 && s.top_p <= 1.0)) throw ConfigError(where + ": top_p must be in (0,1]");
    } else if (s.type == "remote") {
      s.endpoint = detail::need_string(g, "endpoint", where);
      s.timeout = std::chrono::milliseconds(get_or<long>(g, "timeout_ms", 120000));
    } else {
      throw ConfigError(where + ": unknown generator type '" + s.type + "'");
    }
    c.generators.push_back(std::move(s));
  }
  if (c.generators.empty()) throw ConfigError("config declares no generators");

  if (j.contains("round_robin") && !j["round_robin"].is_null()) {
    const auto& rr = j["round_robin"];
    c.round_robin_sources = get_or<std::vector<std::string>>(rr, "sources", {});
    c.round_robin_pairs = get_or<std::size_t>(rr, "pairs_per_source", 0);
    c.round_robin_id = get_or<std::string>(rr, "dataset_id", "round_robin");
    if (c.round_robin_sources->empty() || c.round_robin_pairs == 0) {
      throw ConfigError("round_robin needs sources and pairs_per_source > 0");
    }
    for (const auto& s : *c.round_robin_sources) c.generator(s);
    if (names.count(c.round_robin_id)) throw ConfigError("round_robin dataset_id clashes with a generator name");
  }

  if (j.contains("attacks")) {
    const auto& a = j["attacks"];
    c.attack_targets = get_or<std::vector<std::string>>(a, "targets", {});
    c.attack_ids = get_or<std::vector<std::string>>(a, "ids", {});
    if (a.contains("paraphraser")) c.paraphraser = a["paraphraser"].get<std::string>();
    for (const auto& t : c.attack_targets) c.generator(t);
    for (const auto& id : c.attack_ids) {
      const auto aid = parse_attack_id(id);
      if (aid == AttackId::paraphrase) {
        if (!c.paraphraser) throw ConfigError("paraphrase attack needs attacks.paraphraser");
        c.generator(*c.paraphraser);
      }
    }
  }

  for (const auto& m : get_or<nlohmann::json>(j, "language_models", nlohmann::json::array())) {
    LanguageModelSpec s;
    s.raw = m;
    s.name = detail::need_string(m, "name", "language model");
    if (!m.contains("train")) throw ConfigError("language model '" + s.name + "' needs 'train' corpora");
    s.train = detail::parse_corpora(m["train"], base_dir, "language model '" + s.name + "'.train");
    if (m.contains("vocab")) s.vocab = detail::parse_corpora(m["vocab"], base_dir, "language model '" + s.name + "'.vocab");
    s.lambda = get_or<double>(m, "lambda", 0.9);
    c.language_models.push_back(std::move(s));
  }

  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    if (p.contains("corpus")) c.pretrain_corpora = detail::parse_corpora(p["corpus"], base_dir, "pretrain.corpus");
    c.pretrain.examples = get_or<std::size_t>(p, "examples", c.pretrain.examples);
    c.pretrain.batch_size = get_or<std::size_t>(p, "batch_size", c.pretrain.batch_size);
    c.pretrain.learning_rate = get_or<double>(p, "learning_rate", c.pretrain.learning_rate);
    c.pretrain.seed = get_or<std::uint64_t>(p, "seed", c.seed);
  }
  if (j.contains("probes")) {
    const auto& p = j["probes"];
    if (p.contains("path")) {
      c.probes_path = detail::parse_corpus(p, base_dir, "probes");
    } else if (p.contains("synthetic")) {
      c.synthetic_probes = get_or<std::size_t>(p["synthetic"], "count", 50);
      c.probes_register = get_or<std::string>(p["synthetic"], "register", "human");
      c.probes_seed = get_or<std::uint64_t>(p["synthetic"], "seed", 0);
    }
  }

  const std::string default_calibration = get_or<std::string>(j, "calibration_dataset", c.generators.front().name);
  const auto datasets = c.dataset_ids();
  auto known_dataset = [&](const std::string& d, const std::string& where) {
    if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) {
      throw ConfigError(where + ": unknown dataset '" + d + "'");
    }
  };
  known_dataset(default_calibration, "calibration_dataset");
  std::set<std::string> ids;
  for (const auto& d : get_or<nlohmann::json>(j, "detectors", nlohmann::json::array())) {
    DetectorSpec s;
    s.raw = d;
    s.id = detail::need_string(d, "id", "detector");
    const std::string where = "detector '" + s.id + "'";
    if (!ids.insert(s.id).second) throw ConfigError("duplicate detector id '" + s.id + "'");
    s.type = detail::need_string(d, "type", where);
    s.seed = get_or<std::uint64_t>(d, "seed", c.seed);
    if (s.type == "trained") {
      s.train_dataset = detail::need_string(d, "train_dataset", where);
      known_dataset(s.train_dataset, where);
      s.train.base_model = parse_base_model(get_or<std::string>(d, "base_model", "distil-encoder"));
      s.train.method = parse_method(get_or<std::string>(d, "method", "full"));
      if (d.contains("learning_rate")) s.train.learning_rate = d["learning_rate"].get<double>();
      if (d.contains("batch_size")) s.train.batch_size = d["batch_size"].get<std::size_t>();
      s.train.epochs = get_or<int>(d, "epochs", 1);
      s.train.eval_interval_samples = get_or<std::size_t>(d, "eval_interval_samples", 200);
      s.train.seed = s.seed;
      s.train.validate();
      s.calibration_dataset = get_or<std::string>(d, "calibration_dataset", s.train_dataset);
    } else if (s.type == "curvature") {
      s.scoring_model = detail::need_string(d, "scoring_model", where);
      s.reference_model = get_or<std::string>(d, "reference_model", s.scoring_model);
      c.language_model(s.scoring_model);
      c.language_model(s.reference_model);
      s.estimator = get_or<std::string>(d, "estimator", "analytic");
      if (s.estimator != "analytic" && s.estimator != "monte_carlo") {
        throw ConfigError(where + ": estimator must be 'analytic' or 'monte_carlo'");
      }
      s.n_samples = get_or<std::size_t>(d, "n_samples", 10000);
      if (s.n_samples < 1) throw ConfigError(where + ": n_samples must be >= 1");
    } else if (s.type == "remote") {
      s.endpoint = detail::need_string(d, "endpoint", where);
      s.version = get_or<std::string>(d, "version", "unversioned");
      s.max_concurrency = get_or<std::size_t>(d, "max_concurrency", 4);
    } else if (s.type == "synthetic") {
      s.machine_mean = get_or<double>(d, "machine_mean", 0.8);
      s.human_mean = get_or<double>(d, "human_mean", 0.2);
      s.sd = get_or<double>(d, "sd", 0.1);
    } else {
      throw ConfigError(where + ": unknown detector type '" + s.type + "'");
    }
    if (s.calibration_dataset.empty()) s.calibration_dataset = get_or<std::string>(d, "calibration_dataset", default_calibration);
    known_dataset(s.calibration_dataset, where);
    c.detectors.push_back(std::move(s));
  }

  for (const auto& h : get_or<nlohmann::json>(j, "human_only", nlohmann::json::array())) {
    HumanOnlySpec s;
    s.name = detail::need_string(h, "name", "human_only");
    if (!h.contains("corpus")) throw ConfigError("human_only '" + s.name + "' needs a corpus");
    s.corpus = detail::parse_corpus(h["corpus"], base_dir, "human_only '" + s.name + "'");
    s.limit = get_or<std::size_t>(h, "limit", 0);
    c.human_only.push_back(std::move(s));
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const auto j = nlohmann::json::parse(fs::read_file(path), nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  return parse_config(j, std::filesystem::absolute(path).parent_path());
}

}  // namespace mgtbench
