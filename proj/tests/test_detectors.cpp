// Detector adapters: curvature, trained encoders, remote API, synthetic.

#include <gtest/gtest.h>

#include <cmath>

#include "mgtbench/curvature.hpp"
#include "mgtbench/remote_detector.hpp"
#include "mgtbench/training.hpp"
#include "support.hpp"

using namespace mgtbench;
using testsupport::TempDir;

namespace {

// Brute force over every alternative sequence: each position draws from the
// reference conditional given the observed prefix, independently.
std::pair<double, double> enumerate_alternatives(const TokenModel& scoring, const TokenModel& reference,
                                                 const std::vector<int>& tokens) {
  const std::size_t L = tokens.size();
  std::vector<std::vector<double>> lp(L), q(L);
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<int> ctx(tokens.begin(), tokens.begin() + static_cast<long>(i));
    lp[i] = scoring.next_log_probs(ctx);
    q[i] = reference.next_log_probs(ctx);
  }
  const std::size_t V = lp[0].size();
  std::vector<std::size_t> digit(L, 0);
  double m1 = 0, m2 = 0;
  while (true) {
    double prob = 1, total = 0;
    for (std::size_t i = 0; i < L; ++i) {
      prob *= std::exp(q[i][digit[i]]);
      total += lp[i][digit[i]];
    }
    m1 += prob * total;
    m2 += prob * total * total;
    std::size_t k = 0;
    while (k < L && ++digit[k] == V) digit[k++] = 0;
    if (k == L) break;
  }
  return {m1, m2 - m1 * m1};
}

class CountingDetector : public Detector {
 public:
  std::string id() const override { return "count"; }
  DetectorFamily family() const override { return DetectorFamily::synthetic; }
  std::string version() const override { return "v1"; }
  double score(const std::string& t) override {
    ++calls;
    if (t.rfind("bad", 0) == 0) throw ScoreError("refused");
    return static_cast<double>(t.size());
  }
  std::atomic<int> calls{0};
};

EncoderArch tiny_arch() { return {512, 8, 8, 4, 128}; }

}  // namespace

// ---------------------------------------------------------------------------
// curvature

TEST(Curvature, AnalyticMatchesEnumeration) {
  CyclicMarkovModel scoring({0.6, 0.3, 0.1}), reference({0.5, 0.2, 0.3});
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto tokens = sample_sequence(reference, 7, rng);
    const auto [mean, var] = enumerate_alternatives(scoring, reference, tokens);
    const auto m = analytic_moments(position_tables(scoring, reference, tokens), tokens);
    EXPECT_NEAR(m.expected, mean, 1e-9);
    EXPECT_NEAR(m.variance, var, 1e-9);
  }
}

TEST(Curvature, MonteCarloAgreesWithAnalytic) {
  CyclicMarkovModel model({0.7, 0.2, 0.1});
  Rng rng(11);
  const auto tokens = sample_sequence(model, 40, rng);
  const auto tables = position_tables(model, model, tokens);
  const auto a = analytic_moments(tables, tokens);
  const auto mc = monte_carlo_moments(tables, tokens, 40000, rng);
  EXPECT_NEAR(mc.expected, a.expected, 4 * std::sqrt(a.variance / 40000));
  EXPECT_NEAR(mc.variance / a.variance, 1.0, 0.05);
  EXPECT_EQ(mc.log_likelihood, a.log_likelihood);
}

TEST(Curvature, DetectorScoresAndRejects) {
  auto cyc = std::make_shared<CyclicMarkovModel>(std::vector<double>{0.8, 0.15, 0.05});
  CurvatureDetector det("fd", cyc, cyc, {"cyc", "cyc"});
  const std::string greedy = cyc->tokenizer().decode(greedy_sequence(*cyc, 50));
  EXPECT_GT(det.score(greedy), 0.0);
  EXPECT_EQ(det.score(greedy), det.score(greedy));
  EXPECT_EQ(det.family(), DetectorFamily::zero_shot_curvature);
  EXPECT_NE(det.version().find("analytic"), std::string::npos);

  auto uni = std::make_shared<UniformModel>(3);
  EXPECT_THROW(CurvatureDetector("x", cyc, uni, {"a", "b"}), ConfigError);
  CurvatureDetector flat("flat", uni, uni, {"u", "u"});
  EXPECT_EQ(flat.score(uni->tokenizer().decode(greedy_sequence(*uni, 20))), 0.0);
  EXPECT_THROW(CurvatureDetector("z", cyc, cyc, {"a", "a", 0}), ConfigError);
}

TEST(Curvature, MonteCarloDetectorIsSeededByText) {
  auto cyc = std::make_shared<CyclicMarkovModel>(std::vector<double>{0.5, 0.3, 0.2});
  CurvatureConfig cfg{"c", "c", 500, CurvatureEstimator::monte_carlo, 7};
  CurvatureDetector a("a", cyc, cyc, cfg), b("b", cyc, cyc, cfg);
  Rng rng(1);
  const auto t = cyc->tokenizer().decode(sample_sequence(*cyc, 30, rng));
  EXPECT_EQ(a.score(t), b.score(t));
  EXPECT_NE(a.version(), CurvatureDetector("c", cyc, cyc, {"c", "c"}).version());
}

// ---------------------------------------------------------------------------
// scoring utilities

TEST(ScoreBatch, CacheAndFailureBudget) {
  TempDir tmp;
  CountingDetector det;
  ScoreCache cache(tmp.path());
  ScoreOptions o;
  o.cache = &cache;
  o.concurrency = 4;
  const std::vector<std::string> texts{"a", "bb", "ccc", "a"};
  const auto s = score_batch(det, texts, o);
  EXPECT_EQ(s[2], 3.0);
  EXPECT_LE(det.calls.load(), 4);
  const int before = det.calls.load();
  ScoreCache reopened(tmp.path());
  o.cache = &reopened;
  EXPECT_EQ(score_batch(det, texts, o), s);
  EXPECT_EQ(det.calls.load(), before);

  std::vector<std::string> many(100, "ok");
  many[0] = "bad one";
  o.cache = nullptr;
  const auto partial = score_batch(det, many, o);
  EXPECT_FALSE(partial[0]);
  EXPECT_EQ(partial[1], 2.0);
  many[1] = "bad two";
  many[2] = "bad three";
  EXPECT_THROW(score_batch(det, many, o), ScoreError);
}

TEST(Synthetic, LabelDrivenAndStable) {
  SyntheticDetector det("syn", {});
  det.register_text("human words", Label::human);
  det.register_text("machine words", Label::machine);
  EXPECT_EQ(det.score("human words"), det.score("human words"));
  EXPECT_THROW(det.score("never seen"), ScoreError);
  SyntheticDetector tight("t", {0.8, 0.2, 1e-9, 0});
  tight.register_text("m", Label::machine);
  EXPECT_NEAR(tight.score("m"), 0.8, 1e-6);
}

// ---------------------------------------------------------------------------
// remote detector

TEST(RemoteDetector, ResponseShapes) {
  EXPECT_EQ(machine_probability({{"score", 0.25}}), 0.25);
  EXPECT_EQ(machine_probability({{"class_probabilities", {{"human", 0.1}, {"ai", 0.9}}}}), 0.9);
  EXPECT_EQ(machine_probability({{"class_probabilities", {{"machine", 0.4}}}}), 0.4);
  EXPECT_THROW(machine_probability({{"predicted_class", "ai"}}), ConfigError);
  EXPECT_THROW(machine_probability({{"score", 1.5}}), ScoreError);
  EXPECT_THROW(machine_probability({{"nothing", 1}}), ScoreError);
}

TEST(RemoteDetector, NeedsKey) {
  RemoteDetectorOptions o;
  o.endpoint = "http://127.0.0.1:1/v1";
  EXPECT_THROW(RemoteDetector{o}, ConfigError);
}

TEST(RemoteDetector, CachesRetriesAndRecordsVersion) {
  std::atomic<int> hits{0};
  std::string auth;
  testsupport::MockServer srv([&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 502;
      return;
    }
    auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"score", body["text"].get<std::string>().size() / 100.0}, {"version", "det-2024"}}.dump(),
                    "application/json");
  });
  RemoteDetectorOptions o;
  o.endpoint = srv.url();
  o.api_key = "k123";
  o.retry = testsupport::fast_retry();
  RemoteDetector det(o);
  EXPECT_EQ(det.score("abcde"), 0.05);
  EXPECT_EQ(det.score("abcde"), 0.05);
  EXPECT_EQ(det.request_count(), 2u);
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(auth, "Bearer k123");
  EXPECT_EQ(det.observed_versions(), std::set<std::string>{"det-2024"});
}

TEST(RemoteDetector, ExhaustedRetriesAndRejections) {
  std::atomic<int> status{503};
  testsupport::MockServer srv([&](const httplib::Request&, httplib::Response& res) { res.status = status.load(); });
  RemoteDetectorOptions o;
  o.endpoint = srv.url();
  o.api_key = "k";
  o.retry = testsupport::fast_retry(2);
  RemoteDetector det(o);
  EXPECT_THROW(det.score("x"), ScoreError);
  EXPECT_EQ(det.request_count(), 2u);
  status = 403;
  EXPECT_THROW(det.score("y"), ConfigError);
}

// ---------------------------------------------------------------------------
// training

TEST(Training, DefaultHyperparameterTable) {
  using R = BaseModelRole;
  using M = TrainMethod;
  auto hp = [](R r, M m) { return std::pair{default_hyperparams(r, m).learning_rate, default_hyperparams(r, m).batch_size}; };
  for (auto r : {R::distil_encoder, R::large_encoder_a, R::large_encoder_b}) EXPECT_EQ(hp(r, M::head_only), (std::pair{1e-3, std::size_t{64}}));
  EXPECT_EQ(hp(R::distil_encoder, M::adapter), (std::pair{3e-4, std::size_t{16}}));
  EXPECT_EQ(hp(R::distil_encoder, M::full), (std::pair{3e-5, std::size_t{16}}));
  EXPECT_EQ(hp(R::large_encoder_a, M::adapter), (std::pair{1e-4, std::size_t{16}}));
  EXPECT_EQ(hp(R::large_encoder_a, M::full), (std::pair{1e-5, std::size_t{16}}));
  EXPECT_EQ(hp(R::large_encoder_b, M::adapter), (std::pair{1e-4, std::size_t{8}}));
  EXPECT_EQ(hp(R::large_encoder_b, M::full), (std::pair{1e-5, std::size_t{16}}));
  EXPECT_THROW(parse_method("lora"), ConfigError);
}

TEST(Training, LinearScheduleWithWarmup) {
  // 10 steps, 10% warmup -> one warmup step, then linear decay to 0 at step 10.
  EXPECT_EQ(linear_schedule(1.0, 0, 10, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(linear_schedule(1.0, 1, 10, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(linear_schedule(1.0, 4, 10, 0.1), 6.0 / 9.0);
  EXPECT_DOUBLE_EQ(linear_schedule(1.0, 10, 10, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(linear_schedule(2.0, 5, 100, 0.1), 1.0);
}

TEST(Training, MethodMasks) {
  EncoderModel m(tiny_arch(), 1);
  const auto full = select_method(TrainMethod::full, m);
  const auto head = select_method("head_only", m);
  EXPECT_EQ(full.trainable_count, full.total_count);
  EXPECT_EQ(head.trainable_count, 2 * 8 + 2u);
  EXPECT_EQ(head.base_trainable_count, 0u);
  EXPECT_FALSE(full.trainable.count("mlm.weight"));
  EXPECT_THROW(select_method(TrainMethod::adapter, m), ConfigError);
  prepare_for_method(m, TrainMethod::adapter, 1);
  const auto ad = select_method(TrainMethod::adapter, m);
  EXPECT_EQ(ad.base_trainable_count, 0u);
  EXPECT_GT(ad.trainable_count, head.trainable_count);
  EXPECT_LT(ad.trainable_count, select_method(TrainMethod::full, m).trainable_count);
}

struct TrainFixture : ::testing::Test {
  static void SetUpTestSuite() {
    testsupport::ScriptedBackend be("scripted", PromptMode::chat);
    be.words = 90;
    ds = new PairedDataset(testsupport::build_dataset(be, 250));
    std::vector<std::string> texts;
    for (const auto& r : testsupport::human_records(60, 4)) texts.push_back(r.text);
    base = new EncoderModel(pretrain_mlm(tiny_arch(), texts, {400, 16, 5e-3, 2}));
    for (const auto& p : synth::probes(synth::human_register(), 20, 9)) probes.push_back({p.text_with_gap, p.answer});
  }
  static void TearDownTestSuite() {
    delete ds;
    delete base;
  }
  static TrainConfig cfg(TrainMethod m, double lr) {
    TrainConfig c;
    c.method = m;
    c.learning_rate = lr;
    c.seed = 3;
    return c;
  }
  static inline PairedDataset* ds = nullptr;
  static inline EncoderModel* base = nullptr;
  static inline std::vector<Probe> probes;
};

TEST_F(TrainFixture, EvaluationCadence) {
  ASSERT_EQ(ds->samples_in(Split::train).size(), 400u);
  const auto d = finetune(*base, *ds, cfg(TrainMethod::full, 1e-2), "d");
  ASSERT_EQ(d.training_log.size(), 2u);
  EXPECT_EQ(d.training_log.back().samples_seen, 400u);
  double best = INFINITY;
  for (const auto& e : d.training_log) best = std::min(best, e.eval_loss);
  EXPECT_EQ(d.best_eval_loss, best);
  EXPECT_DOUBLE_EQ(eval_loss(d.model, *ds), best);

  auto c = cfg(TrainMethod::full, 1e-2);
  c.eval_interval_samples = 5000;
  EXPECT_EQ(finetune(*base, *ds, c, "d").training_log.size(), 1u);
}

TEST_F(TrainFixture, LearnsAndIsDeterministic) {
  const auto a = finetune(*base, *ds, cfg(TrainMethod::full, 1e-2), "a");
  const auto b = finetune(*base, *ds, cfg(TrainMethod::full, 1e-2), "a");
  EXPECT_EQ(a.training_log, b.training_log);
  EXPECT_LT(a.best_eval_loss, std::log(2.0));
  TrainedDetectorAdapter det(std::make_shared<TrainedDetector>(a));
  std::size_t right = 0, n = 0;
  for (const auto* s : ds->samples_in(Split::test)) {
    right += (det.score(s->text) >= 0.5) == (s->label == Label::machine);
    ++n;
  }
  EXPECT_GT(static_cast<double>(right) / n, 0.8);
}

TEST_F(TrainFixture, HeadOnlyLeavesEncoderAlone) {
  const auto d = finetune(*base, *ds, cfg(TrainMethod::head_only, 1e-2), "h", &probes);
  EXPECT_EQ(d.model.params().at("embeddings").data, base->params().at("embeddings").data);
  EXPECT_EQ(d.model.params().at("encoder.weight").data, base->params().at("encoder.weight").data);
  const double before = track_degradation(*base, probes);
  for (const auto& e : d.training_log) EXPECT_DOUBLE_EQ(*e.degradation_loss, before);

  const auto full = finetune(*base, *ds, cfg(TrainMethod::full, 5e-2), "f", &probes);
  EXPECT_NE(*full.training_log.back().degradation_loss, before);
}

TEST_F(TrainFixture, RejectsAttackSetsAndBadProbes) {
  auto locked = *ds;
  locked.calibration_locked = true;
  EXPECT_THROW(finetune(*base, locked, cfg(TrainMethod::full, 1e-2), "x"), ConfigError);
  std::vector<Probe> bad{{"two [MASK] masks [MASK]", "x"}};
  EXPECT_THROW(track_degradation(*base, bad), ProbeError);
  EXPECT_THROW(track_degradation(*base, {}), ProbeError);
  auto c = cfg(TrainMethod::full, 1e-2);
  c.epochs = 0;
  EXPECT_THROW(finetune(*base, *ds, c, "x"), ConfigError);
}

TEST_F(TrainFixture, DivergenceRaisesTrainError) {
  EXPECT_THROW(finetune(*base, *ds, cfg(TrainMethod::full, 1e300), "x"), TrainError);
}

TEST_F(TrainFixture, CheckpointRoundTrip) {
  const auto d = finetune(*base, *ds, cfg(TrainMethod::adapter, 1e-2), "ad", &probes);
  TempDir tmp;
  save_checkpoint(d, tmp / "ck");
  for (const char* f : {"weights.bin", "config.json", "training_log.jsonl"}) EXPECT_TRUE(std::filesystem::exists(tmp / "ck" / f)) << f;
  const auto back = load_checkpoint(tmp / "ck");
  EXPECT_EQ(back.training_log, d.training_log);
  EXPECT_EQ(back.config.method, TrainMethod::adapter);
  EXPECT_EQ(back.config.lr(), 1e-2);
  EXPECT_EQ(back.best_eval_loss, d.best_eval_loss);
  TrainedDetectorAdapter x(std::make_shared<TrainedDetector>(d)), y(std::make_shared<TrainedDetector>(back));
  EXPECT_EQ(x.version(), y.version());
  for (const auto* s : ds->samples_in(Split::test)) EXPECT_EQ(x.score(s->text), y.score(s->text));

  auto bytes = fs::read_file(tmp / "ck" / "weights.bin");
  fs::atomic_write(tmp / "ck" / "weights.bin", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(tmp / "ck"), VersionError);
  bytes[0] = 'X';
  fs::atomic_write(tmp / "ck" / "weights.bin", bytes);
  EXPECT_THROW(load_checkpoint(tmp / "ck"), VersionError);
}

TEST_F(TrainFixture, LongTextsAreTruncatedAndCounted) {
  const auto d = finetune(*base, *ds, cfg(TrainMethod::head_only, 1e-2), "h");
  TrainedDetectorAdapter det(std::make_shared<TrainedDetector>(d));
  std::string long_text;
  for (int i = 0; i < 300; ++i) long_text += "word" + std::to_string(i) + " ";
  const double p = det.score(long_text);
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_EQ(det.truncated_count(), 1u);
  EXPECT_THROW(det.score(""), InputError);
}
