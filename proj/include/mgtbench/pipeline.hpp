#pragma once

// Config-driven stages: build datasets -> attacks -> train -> calibrate ->
// evaluate -> report. Each stage writes a stage.json holding the hash of the
// config it was built from; a stage whose hash matches is skipped unless
// forced.
//
// Output layout under output_dir:
//   datasets/{id}/            samples.jsonl, manifest.json, stage.json
//   datasets/{base}@{attack}/ attack test sets
//   models/base/{role}/       pretrained encoders
//   detectors/{id}/           weights.bin, config.json, training_log.jsonl
//   thresholds/{id}.json
//   cache/                    score and regeneration caches
//   runs/{run_id}/            cells.json, run.json, report.md, figures

#include <chrono>
#include <ctime>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/attacks.hpp"
#include "mgtbench/backends.hpp"
#include "mgtbench/config.hpp"
#include "mgtbench/curvature.hpp"
#include "mgtbench/dataset_io.hpp"
#include "mgtbench/evaluation.hpp"
#include "mgtbench/remote_detector.hpp"
#include "mgtbench/reporting.hpp"
#include "mgtbench/synth.hpp"
#include "mgtbench/training.hpp"

namespace mgtbench {

using Logger = std::function<void(const std::string&)>;

struct StageOptions {
  bool force = false;
  Logger log = [](const std::string&) {};
};

struct EvaluateOptions {
  bool calibrate_missing = false;
  bool human_only = true;
  std::string run_id;  // empty: derived from the clock
  bool force = false;
  std::string started_at;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, StageOptions opts = {})
      : cfg_(std::move(cfg)), opts_(std::move(opts)), score_cache_(cfg_.output_dir / "cache" / "scores") {}

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return cfg_.output_dir; }
  std::filesystem::path dataset_dir(const std::string& id) const { return out() / "datasets" / id; }
  std::filesystem::path detector_dir(const std::string& id) const { return out() / "detectors" / id; }
  std::filesystem::path threshold_path(const std::string& id) const { return out() / "thresholds" / (id + ".json"); }
  static std::string attack_dataset_id(const std::string& base, const std::string& attack) { return base + "@" + attack; }

  // -------------------------------------------------------------------------
  // Corpora

  std::vector<RawRecord> load_corpus(const CorpusSpec& c) const {
    if (c.path) {
      if (!std::filesystem::exists(*c.path)) throw InputError("corpus file not found: " + c.path->string());
      return load_raw_corpus(*c.path);
    }
    return synth::corpus(synth::register_by_name(c.synthetic_register), c.synthetic_articles, c.synthetic_seed,
                         c.name + "-");
  }

  std::vector<std::string> corpus_texts(const std::vector<CorpusSpec>& specs) const {
    std::vector<std::string> out;
    for (const auto& c : specs) {
      for (auto& r : load_corpus(c)) out.push_back(std::move(r.text));
    }
    return out;
  }

  std::string corpus_fingerprint(const CorpusSpec& c) const {
    if (c.path) {
      if (!std::filesystem::exists(*c.path)) throw InputError("corpus file not found: " + c.path->string());
      return sha256_hex(fs::read_file(*c.path));
    }
    return sha256_hex(c.raw.dump());
  }

  std::string corpora_fingerprint(const std::vector<CorpusSpec>& specs) const {
    std::string all;
    for (const auto& c : specs) all += corpus_fingerprint(c);
    return sha256_hex(all);
  }

  // -------------------------------------------------------------------------
  // Stage hashes

  GenerationParams base_params() const {
    GenerationParams p = cfg_.generation;
    if (!p.seed) p.seed = cfg_.seed;
    return p;
  }

  std::string generator_hash(const std::string& name) const {
    const auto& g = cfg_.generator(name);
    return sha256_hex(g.raw.dump() + (g.type == "ngram" ? corpora_fingerprint(g.train) : std::string()));
  }

  std::string dataset_hash(const std::string& id) const {
    if (cfg_.round_robin_sources && id == cfg_.round_robin_id) {
      nlohmann::json j = {{"rr", cfg_.raw.at("round_robin")}, {"seed", cfg_.seed}, {"splits", split_json()}};
      for (const auto& s : *cfg_.round_robin_sources) j["sources"].push_back(dataset_hash(s));
      return sha256_hex(j.dump());
    }
    const nlohmann::json j = {{"corpus", corpus_fingerprint(cfg_.corpus)},
                              {"generator", generator_hash(id)},
                              {"prompt", template_json(cfg_.prompt)},
                              {"params", base_params().to_json()},
                              {"seed", cfg_.seed},
                              {"splits", split_json()},
                              {"max_failure_fraction", cfg_.max_failure_fraction}};
    return sha256_hex(j.dump());
  }

  std::string attack_hash(const std::string& target, const std::string& attack) const {
    nlohmann::json j = {{"base", dataset_hash(target)},
                        {"attack", attack},
                        {"generator", generator_hash(target)},
                        {"prompt", template_json(cfg_.prompt)},
                        {"params", base_params().to_json()},
                        {"avg_chars_per_token", cfg_.avg_chars_per_token ? nlohmann::json(*cfg_.avg_chars_per_token) : nlohmann::json(nullptr)}};
    if (parse_attack_id(attack) == AttackId::paraphrase) j["paraphraser"] = generator_hash(*cfg_.paraphraser);
    return sha256_hex(j.dump());
  }

  std::string base_model_hash(BaseModelRole role) const {
    const nlohmann::json j = {{"role", to_string(role)},
                              {"arch", arch_to_json(arch_for(role))},
                              {"corpus", corpora_fingerprint(pretrain_corpora())},
                              {"examples", cfg_.pretrain.examples},
                              {"batch", cfg_.pretrain.batch_size},
                              {"lr", cfg_.pretrain.learning_rate},
                              {"seed", cfg_.pretrain.seed}};
    return sha256_hex(j.dump());
  }

  std::string detector_hash(const std::string& id) const {
    const auto& d = cfg_.detector(id);
    nlohmann::json j = {{"spec", d.raw}};
    if (d.type == "trained") {
      j["dataset"] = dataset_hash(d.train_dataset);
      j["base"] = base_model_hash(d.train.base_model);
      j["train"] = train_json(d.train);
      j["probes"] = probes_fingerprint();
    } else if (d.type == "curvature") {
      j["scoring"] = language_model_hash(d.scoring_model);
      j["reference"] = language_model_hash(d.reference_model);
    }
    return sha256_hex(j.dump());
  }

  std::string threshold_hash(const std::string& id) const {
    const auto& d = cfg_.detector(id);
    const nlohmann::json j = {{"detector", detector_hash(id)},
                              {"dataset", dataset_hash(d.calibration_dataset)},
                              {"target_fpr", cfg_.calibration.target_fpr},
                              {"rule", cfg_.calibration.rule == FprRule::at_most ? "at_most" : "closest"},
                              {"placement", cfg_.calibration.placement == ThresholdPlacement::at_score ? "at_score" : "midpoint"}};
    return sha256_hex(j.dump());
  }

  // -------------------------------------------------------------------------
  // Models

  std::shared_ptr<GeneratorBackend> backend(const std::string& name) {
    std::lock_guard lock(mu_);
    if (auto it = backends_.find(name); it != backends_.end()) return it->second;
    const auto& g = cfg_.generator(name);
    std::shared_ptr<GeneratorBackend> b;
    if (g.type == "ngram") {
      const auto texts = corpus_texts(g.train);
      auto model = std::make_shared<BigramModel>(WordTokenizer::from_texts(texts), texts, g.lambda);
      LocalBackendOptions o;
      o.name = g.name;
      o.kind = g.kind;
      o.supports_forced_prefix = g.supports_forced_prefix;
      o.supports_system_prompt = g.supports_system_prompt;
      o.eos_probability = g.eos_probability;
      o.top_p = g.top_p;
      b = std::make_shared<LocalModelBackend>(std::move(model), o);
    } else {
      RemoteBackendOptions o;
      o.name = g.name;
      o.kind = g.kind;
      o.endpoint = g.endpoint;
      o.timeout = g.timeout;
      o.capabilities = {g.supports_forced_prefix, g.supports_system_prompt, g.max_concurrency};
      b = std::make_shared<RemoteBackend>(o);
    }
    backends_[name] = b;
    return b;
  }

  std::shared_ptr<const TokenModel> language_model(const std::string& name) {
    std::lock_guard lock(mu_);
    if (auto it = lms_.find(name); it != lms_.end()) return it->second;
    const auto& m = cfg_.language_model(name);
    const auto texts = corpus_texts(m.train);
    auto vocab_texts = texts;
    for (auto& t : corpus_texts(m.vocab)) vocab_texts.push_back(std::move(t));
    auto lm = std::make_shared<BigramModel>(WordTokenizer::from_texts(vocab_texts), texts, m.lambda);
    lms_[name] = lm;
    return lm;
  }

  EncoderModel base_model(BaseModelRole role) {
    const auto dir = out() / "models" / "base" / to_string(role);
    const auto hash = base_model_hash(role);
    if (stage_current(dir, hash)) return load_model(dir);
    opts_.log(std::string("pretraining base encoder ") + to_string(role));
    auto model = pretrain_mlm(arch_for(role), corpus_texts(pretrain_corpora()), cfg_.pretrain);
    save_model(model, dir);
    mark_stage(dir, hash);
    return model;
  }

  std::vector<Probe> probes() const {
    if (cfg_.probes_path) return load_probes(*cfg_.probes_path->path);
    std::vector<Probe> out;
    if (cfg_.synthetic_probes == 0) return out;
    for (auto& p : synth::probes(synth::register_by_name(cfg_.probes_register), cfg_.synthetic_probes, cfg_.probes_seed)) {
      out.push_back({std::move(p.text_with_gap), std::move(p.answer)});
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Stage: datasets

  PairedDataset dataset(const std::string& id) const {
    const auto dir = dataset_dir(id);
    if (!std::filesystem::exists(dir / "manifest.json")) {
      throw InputError("dataset '" + id + "' has not been built (run build-dataset / attack first)");
    }
    return load_dataset(dir);
  }

  // Returns the ids that were (re)built.
  std::vector<std::string> build_datasets(const std::vector<std::string>& only = {}, bool round_robin = true) {
    std::vector<std::string> built;
    auto wanted = [&](const std::string& id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    std::optional<std::vector<CleanArticle>> articles;
    for (const auto& g : cfg_.generators) {
      if (!wanted(g.name)) continue;
      const auto hash = dataset_hash(g.name);
      if (stage_current(dataset_dir(g.name), hash)) {
        opts_.log("dataset " + g.name + " is up to date");
        continue;
      }
      if (!articles) articles = ingest_articles(load_corpus(cfg_.corpus), cfg_.corpus.name);
      opts_.log("building dataset " + g.name);
      std::vector<Prefix> prefixes;
      for (const auto& a : *articles) {
        if (a.too_short) continue;
        try {
          prefixes.push_back(extract_prefix(a));
        } catch (const PrefixTooShort&) {
        }
      }
      auto be = backend(g.name);
      CorpusOptions co{cfg_.generation_concurrency, cfg_.max_failure_fraction, cfg_.retry};
      const auto params = base_params();
      const auto result = generate_corpus(*be, prefixes, cfg_.prompt, params, co);
      const std::uint64_t seed = fnv1a64(g.name, cfg_.seed);
      PairOptions po{g.name, g.name, cfg_.corpus.name, g.kind == PromptMode::chat ? std::optional(cfg_.prompt.prompt_id) : std::optional<std::string>("completion")};
      auto ds = build_paired_dataset(*articles, result.texts, seed, po);
      for (const auto& f : result.failures) ds.manifest.discards.push_back({pair_id_for(f.article_id), "generation_failed: " + f.error});
      std::map<std::string, std::size_t> paths;
      for (const auto& [_, p] : result.paths) ++paths[to_string(p)];
      ds.manifest.generation = {{"backend", be->describe()},
                                {"generation_params", params.to_json()},
                                {"prompt_id", *po.prompt_id},
                                {"prefix_paths", paths}};
      ds = split_dataset(std::move(ds), seed, cfg_.splits);
      save_dataset(ds, dataset_dir(g.name));
      mark_stage(dataset_dir(g.name), hash);
      built.push_back(g.name);
    }
    if (round_robin && cfg_.round_robin_sources && wanted(cfg_.round_robin_id)) {
      const auto hash = dataset_hash(cfg_.round_robin_id);
      if (stage_current(dataset_dir(cfg_.round_robin_id), hash)) {
        opts_.log("dataset " + cfg_.round_robin_id + " is up to date");
      } else {
        opts_.log("building round-robin dataset " + cfg_.round_robin_id);
        std::vector<PairedDataset> sources;
        for (const auto& s : *cfg_.round_robin_sources) sources.push_back(dataset(s));
        auto rr = build_round_robin(sources, cfg_.round_robin_pairs, cfg_.seed, cfg_.round_robin_id, cfg_.splits);
        save_dataset(rr, dataset_dir(cfg_.round_robin_id));
        mark_stage(dataset_dir(cfg_.round_robin_id), hash);
        built.push_back(cfg_.round_robin_id);
      }
    }
    return built;
  }

  // -------------------------------------------------------------------------
  // Stage: attacks

  AttackOptions attack_options() const {
    AttackOptions o;
    o.base_template = cfg_.prompt;
    o.base_params = base_params();
    o.avg_chars_per_token = cfg_.avg_chars_per_token;
    o.concurrency = cfg_.generation_concurrency;
    o.max_failure_fraction = cfg_.max_failure_fraction;
    o.retry = cfg_.retry;
    o.cache_dir = out() / "cache" / "attacks";
    return o;
  }

  std::vector<std::string> build_attacks() {
    std::vector<std::string> built;
    for (const auto& target : cfg_.attack_targets) {
      std::optional<PairedDataset> base;
      for (const auto& a : cfg_.attack_ids) {
        const auto id = attack_dataset_id(target, a);
        const auto hash = attack_hash(target, a);
        if (stage_current(dataset_dir(id), hash)) {
          opts_.log("attack set " + id + " is up to date");
          continue;
        }
        if (!base) base = dataset(target);
        opts_.log("building attack set " + id);
        const auto spec = find_attack(a, cfg_.paraphraser.value_or("paraphraser"));
        auto be = spec.attack_id == AttackId::paraphrase ? backend(*cfg_.paraphraser) : backend(target);
        auto ds = apply_attack(spec, *base, *be, attack_options());
        save_dataset(ds, dataset_dir(id));
        mark_stage(dataset_dir(id), hash);
        built.push_back(id);
      }
    }
    return built;
  }

  std::vector<std::string> attack_dataset_ids() const {
    std::vector<std::string> out;
    for (const auto& t : cfg_.attack_targets) {
      for (const auto& a : cfg_.attack_ids) out.push_back(attack_dataset_id(t, a));
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Stage: training

  // Trains every trained detector in `ids` (all when empty).
  std::vector<std::string> train(const std::vector<std::string>& ids = {}) {
    std::vector<std::string> done;
    const auto probe_set = probes();
    for (const auto& d : cfg_.detectors) {
      if (d.type != "trained") continue;
      if (!ids.empty() && std::find(ids.begin(), ids.end(), d.id) == ids.end()) continue;
      const auto dir = detector_dir(d.id);
      const auto hash = detector_hash(d.id);
      if (stage_current(dir, hash)) {
        opts_.log("detector " + d.id + " is up to date");
        continue;
      }
      const auto ds = dataset(d.train_dataset);
      const auto base = base_model(d.train.base_model);
      opts_.log("training " + d.id + " (" + to_string(d.train.method) + ") on " + d.train_dataset);
      const auto trained = finetune(base, ds, d.train, d.id, probe_set.empty() ? nullptr : &probe_set);
      save_checkpoint(trained, dir);
      mark_stage(dir, hash);
      done.push_back(d.id);
    }
    return done;
  }

  // -------------------------------------------------------------------------
  // Detectors

  std::unique_ptr<Detector> make_detector(const std::string& id) {
    const auto& d = cfg_.detector(id);
    if (d.type == "trained") {
      const auto dir = detector_dir(id);
      if (!stage_current(dir, detector_hash(id))) {
        throw InputError("detector '" + id + "' is not trained for the current config (run train first)");
      }
      return std::make_unique<TrainedDetectorAdapter>(std::make_shared<TrainedDetector>(load_checkpoint(dir)));
    }
    if (d.type == "curvature") {
      CurvatureConfig cc{d.scoring_model, d.reference_model, d.n_samples,
                         d.estimator == "analytic" ? CurvatureEstimator::analytic : CurvatureEstimator::monte_carlo, d.seed};
      return std::make_unique<CurvatureDetector>(id, language_model(d.scoring_model), language_model(d.reference_model), cc);
    }
    if (d.type == "remote") {
      RemoteDetectorOptions o;
      o.id = id;
      o.endpoint = d.endpoint;
      o.version = d.version;
      o.retry = cfg_.retry;
      o.max_concurrency = d.max_concurrency;
      const char* key = std::getenv(kDetectorApiKeyEnv);
      o.api_key = key ? key : "";
      return std::make_unique<RemoteDetector>(o);
    }
    // synthetic: labels come from every dataset and human-only corpus on disk
    auto s = std::make_unique<SyntheticDetector>(id, SyntheticDetector::Params{d.machine_mean, d.human_mean, d.sd, d.seed});
    for (const auto& ds_id : cfg_.dataset_ids()) {
      if (std::filesystem::exists(dataset_dir(ds_id) / "manifest.json")) s->register_dataset(dataset(ds_id));
    }
    for (const auto& ds_id : attack_dataset_ids()) {
      if (std::filesystem::exists(dataset_dir(ds_id) / "manifest.json")) s->register_dataset(dataset(ds_id));
    }
    for (const auto& h : cfg_.human_only) {
      for (const auto& t : human_only_texts(h)) s->register_text(t, Label::human);
    }
    return s;
  }

  ScoreOptions score_options() {
    ScoreOptions o;
    o.max_failure_fraction = cfg_.max_failure_fraction;
    o.cache = &score_cache_;
    o.concurrency = cfg_.scoring_concurrency;
    return o;
  }

  // -------------------------------------------------------------------------
  // Stage: calibration

  std::optional<Threshold> stored_threshold(const std::string& id) const {
    const auto p = threshold_path(id);
    if (!std::filesystem::exists(p)) return std::nullopt;
    const auto j = nlohmann::json::parse(fs::read_file(p));
    if (j.value("stage_hash", "") != threshold_hash(id)) return std::nullopt;
    return threshold_from_json(j.at("threshold"));
  }

  std::map<std::string, Threshold> calibrate(const std::vector<std::string>& ids = {}) {
    std::map<std::string, Threshold> out;
    for (const auto& d : cfg_.detectors) {
      if (!ids.empty() && std::find(ids.begin(), ids.end(), d.id) == ids.end()) continue;
      if (!opts_.force) {
        if (auto t = stored_threshold(d.id)) {
          opts_.log("threshold for " + d.id + " is up to date");
          out[d.id] = *t;
          continue;
        }
      }
      auto det = make_detector(d.id);
      const auto ds = dataset(d.calibration_dataset);
      opts_.log("calibrating " + d.id + " on " + d.calibration_dataset);
      const auto t = calibrate_on_dataset(*det, ds, cfg_.calibration, score_options());
      const nlohmann::json j = {{"stage_hash", threshold_hash(d.id)}, {"threshold", threshold_to_json(t)}};
      fs::atomic_write(threshold_path(d.id), j.dump(2) + "\n");
      out[d.id] = t;
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Stage: evaluation

  std::vector<std::string> human_only_texts(const HumanOnlySpec& h) const {
    const auto articles = ingest_articles(load_corpus(h.corpus), h.corpus.name);
    std::vector<std::string> out;
    for (const auto& a : articles) {
      if (a.too_short) continue;
      out.push_back(truncate_to_500(a.text));
      if (h.limit && out.size() >= h.limit) break;
    }
    return out;
  }

  RunArtifacts evaluate(const EvaluateOptions& eo) {
    RunArtifacts run;
    run.manifest.started_at = eo.started_at.empty() ? utc_timestamp() : eo.started_at;
    std::map<std::string, Threshold> thresholds;
    for (const auto& d : cfg_.detectors) {
      if (auto t = stored_threshold(d.id)) {
        thresholds[d.id] = *t;
      } else if (eo.calibrate_missing) {
        thresholds[d.id] = calibrate({d.id}).at(d.id);
      } else {
        throw MetricError("detector '" + d.id + "' has no calibrated threshold for the current config; run calibrate or pass --calibrate");
      }
    }

    std::vector<PairedDataset> data;
    for (const auto& id : cfg_.dataset_ids()) data.push_back(dataset(id));
    // A regenerated `none` set shares its cell with the base dataset, which stays the baseline.
    for (const auto& t : cfg_.attack_targets) {
      for (const auto& a : cfg_.attack_ids) {
        if (parse_attack_id(a) != AttackId::none) data.push_back(dataset(attack_dataset_id(t, a)));
      }
    }
    std::vector<EvalTarget> targets;
    for (const auto& ds : data) targets.push_back(target_for(ds));

    std::vector<std::unique_ptr<Detector>> owned;
    std::vector<Detector*> dets;
    for (const auto& d : cfg_.detectors) {
      owned.push_back(make_detector(d.id));
      dets.push_back(owned.back().get());
    }
    EvalOptions ev{cfg_.ci_level, cfg_.ci_method, score_options()};
    opts_.log("evaluating " + std::to_string(dets.size()) + " detectors on " + std::to_string(targets.size()) + " test sets");
    run.grid = evaluate_matrix(dets, targets, thresholds, ev);

    if (eo.human_only) {
      for (std::size_t i = 0; i < dets.size(); ++i) {
        const auto& spec = cfg_.detectors[i];
        const auto& t = thresholds.at(spec.id);
        std::vector<std::string> in;
        const auto cal = dataset(spec.calibration_dataset);
        for (const auto* s : cal.samples_in(Split::test)) {
          if (s->label == Label::human) in.push_back(s->text);
        }
        run.grid.human_only.push_back(evaluate_human_only(*dets[i], t, in, "in-distribution", ev));
        for (const auto& h : cfg_.human_only) {
          run.grid.human_only.push_back(evaluate_human_only(*dets[i], t, human_only_texts(h), h.name, ev));
        }
      }
    }

    nlohmann::json m = {{"config_hash", cfg_.hash()}, {"seed", cfg_.seed}, {"target_fpr", cfg_.calibration.target_fpr},
                        {"ci_method", cfg_.ci_method == CiMethod::wald ? "wald" : "wilson"}, {"ci_level", cfg_.ci_level}};
    for (const auto& ds : data) m["datasets"][ds.dataset_id] = dataset_hash_for(ds.dataset_id);
    run.grid.manifest = m;
    run.grid.sort();

    run.manifest.run_id = eo.run_id.empty() ? "run-" + compact(run.manifest.started_at) : eo.run_id;
    run.manifest.config_hash = cfg_.hash();
    run.manifest.seeds["global"] = cfg_.seed;
    for (const auto& d : cfg_.detectors) run.manifest.seeds["detector:" + d.id] = d.seed;
    for (const auto& g : cfg_.generators) {
      run.manifest.backend_versions[g.name] = backend(g.name)->describe().dump();
    }
    for (const auto* d : dets) run.manifest.backend_versions["detector:" + d->id()] = d->version();
    for (const auto& ds : data) {
      run.manifest.dataset_manifests.push_back(manifest_to_json(ds));
      run.manifest.failure_counts["discards:" + ds.dataset_id] = ds.manifest.discards.size();
    }
    for (const auto& c : run.grid.cells) {
      if (c.failed) run.manifest.failure_counts["score:" + c.detector_id + "/" + c.dataset_id + "/" + c.attack_id] = c.failed;
    }
    for (const auto& [_, t] : thresholds) run.manifest.thresholds.push_back(t);
    run.manifest.finished_at = utc_timestamp();

    PersistOptions po;
    po.force = eo.force;
    po.reference_human_dataset = "in-distribution";
    persist_run(run, out() / "runs", po);
    return run;
  }

 private:
  std::vector<CorpusSpec> pretrain_corpora() const {
    if (!cfg_.pretrain_corpora.empty()) return cfg_.pretrain_corpora;
    return {cfg_.corpus};
  }

  std::string probes_fingerprint() const {
    if (cfg_.probes_path) return corpus_fingerprint(*cfg_.probes_path);
    return std::to_string(cfg_.synthetic_probes) + ":" + cfg_.probes_register + ":" + std::to_string(cfg_.probes_seed);
  }

  std::string language_model_hash(const std::string& name) const {
    const auto& m = cfg_.language_model(name);
    return sha256_hex(m.raw.dump() + corpora_fingerprint(m.train) + corpora_fingerprint(m.vocab));
  }

  std::string dataset_hash_for(const std::string& id) const {
    for (const auto& t : cfg_.attack_targets) {
      for (const auto& a : cfg_.attack_ids) {
        if (attack_dataset_id(t, a) == id) return attack_hash(t, a);
      }
    }
    return dataset_hash(id);
  }

  nlohmann::json split_json() const { return {cfg_.splits.train, cfg_.splits.eval, cfg_.splits.test}; }

  static nlohmann::json template_json(const PromptTemplate& t) {
    return {{"prompt_id", t.prompt_id}, {"system", t.system ? nlohmann::json(*t.system) : nlohmann::json(nullptr)},
            {"user", t.user}, {"mode", to_string(t.mode)}};
  }

  static nlohmann::json train_json(const TrainConfig& t) {
    return {{"base_model", to_string(t.base_model)}, {"method", to_string(t.method)}, {"lr", t.lr()},
            {"batch", t.batch()}, {"epochs", t.epochs}, {"interval", t.eval_interval_samples},
            {"warmup", t.warmup_fraction}, {"decay", t.weight_decay}, {"seed", t.seed}};
  }

  static std::string compact(const std::string& ts) {
    std::string s;
    for (char ch : ts) {
      if (std::isdigit(static_cast<unsigned char>(ch))) s += ch;
      if (ch == 'T') s += '-';
    }
    return s;
  }

  bool stage_current(const std::filesystem::path& dir, const std::string& hash) const {
    if (opts_.force) return false;
    const auto p = dir / "stage.json";
    if (!std::filesystem::exists(p)) return false;
    const auto j = nlohmann::json::parse(fs::read_file(p), nullptr, false);
    return !j.is_discarded() && j.value("hash", "") == hash;
  }

  void mark_stage(const std::filesystem::path& dir, const std::string& hash) const {
    fs::atomic_write(dir / "stage.json", nlohmann::json{{"hash", hash}}.dump() + "\n");
  }

  ExperimentConfig cfg_;
  StageOptions opts_;
  ScoreCache score_cache_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<GeneratorBackend>> backends_;
  std::map<std::string, std::shared_ptr<const TokenModel>> lms_;
};

}  // namespace mgtbench
