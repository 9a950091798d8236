// Acceptance checks. One line per criterion; exit status is nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "mgtbench/pipeline.hpp"
#include "support.hpp"

using namespace mgtbench;
namespace stdfs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
  void check(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1 ---------------------------------------------------------------------

Outcome calibration_oracle() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int levels = trial % 4 == 0 ? 0 : 3 + static_cast<int>(rng.below(30));  // ties in 3 of 4 sets
    auto draw = [&](std::size_t n, double shift) {
      std::vector<double> v;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform() + shift;
        v.push_back(levels ? std::floor(x * levels) / levels : x);
      }
      return v;
    };
    const auto h = draw(1 + rng.below(200), 0.0);
    const auto m = draw(1 + rng.below(200), 0.3 * rng.uniform());
    const double target = std::vector<double>{0.05, 0.01, 0.1, 0.25}[trial % 4];

    std::vector<double> cand(h);
    cand.insert(cand.end(), m.begin(), m.end());
    cand.push_back(INFINITY);
    std::size_t best_tp = 0, best_fp = 0;
    double best_t = INFINITY;
    bool found = false;
    for (double t : cand) {
      std::size_t tp = 0, fp = 0;
      for (double x : m) tp += x >= t;
      for (double x : h) fp += x >= t;
      if (static_cast<double>(fp) > target * static_cast<double>(h.size())) continue;
      if (!found || tp > best_tp || (tp == best_tp && fp < best_fp)) {
        best_tp = tp;
        best_fp = fp;
        best_t = t;
        found = true;
      }
    }
    const auto got = calibrate_threshold(h, m, {target});
    const bool same = got.value == best_t &&
                      got.achieved_tpr_on_eval == static_cast<double>(best_tp) / static_cast<double>(m.size()) &&
                      got.achieved_fpr_on_eval == static_cast<double>(best_fp) / static_cast<double>(h.size());
    mismatches += !same;
  }
  const double secs = seconds_since(t0);
  o.check(mismatches == 0, std::to_string(mismatches) + " of 500 sets differ from the oracle");
  o.check(secs < 10.0, "took " + fmt(secs, 1) + " s");
  if (o.ok) o.detail = "500/500 sets match the brute-force oracle in " + fmt(secs, 2) + " s";
  return o;
}

// --- 2 ---------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  Rng rng(77);
  int auc_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s;
    std::vector<Label> l;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(trial % 2 ? static_cast<double>(rng.below(6)) : rng.uniform());
      l.push_back(i == 0 ? Label::human : i == 1 ? Label::machine : (rng.below(2) ? Label::machine : Label::human));
    }
    long twice = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (l[i] == Label::machine && l[j] == Label::human) {
          ++pairs;
          twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
        }
      }
    }
    auc_bad += roc_auc(s, l) != static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
  }
  o.check(auc_bad == 0, std::to_string(auc_bad) + " of 200 AUC instances differ");

  // Hand-counted fixture at t = 0.5: machines 0.9 0.6 0.5 0.2 (tp 3), humans 0.7 0.5 0.3 0.1 (fp 2).
  const auto c = compute_confusion({0.9, 0.7, 0.6, 0.5, 0.5, 0.3, 0.2, 0.1},
                                   {Label::machine, Label::human, Label::machine, Label::machine, Label::human,
                                    Label::human, Label::machine, Label::human},
                                   0.5);
  o.check(c.tp == 3 && c.fn == 1 && c.fp == 2 && c.tn == 2, "confusion fixture counts");
  const auto only_h = compute_confusion({0.1, 0.9, 0.4}, {Label::human, Label::human, Label::human}, 0.5);
  o.check(!only_h.tpr && only_h.fp == 1 && only_h.tn == 2, "human-only fixture counts");

  const double ci = binomial_ci(0.95, 884);
  o.check(std::abs(ci - 0.01437) <= 1e-4, "binomial_ci(0.95, 884) = " + fmt(ci, 5));
  o.check(std::lround(100 * ci) == 1, "CI does not round to 1 point");
  if (o.ok) o.detail = "200/200 AUC exact, confusion fixtures match, binomial_ci(0.95, 884) = " + fmt(ci, 5) + " (± 1%)";
  return o;
}

// --- 3 ---------------------------------------------------------------------

Outcome pipeline_invariants() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  testsupport::ScriptedBackend gen("mockgen", PromptMode::chat);
  const auto ds = testsupport::build_dataset(gen, 200, 5, "mock");
  o.check(ds.pair_count() == 200, "built " + std::to_string(ds.pair_count()) + " pairs");
  const auto problems = check_integrity(ds);
  o.check(problems.empty(), problems.empty() ? "" : "integrity: " + problems.front());

  std::map<std::string, std::pair<int, int>> per_pair;
  std::map<Split, std::pair<int, int>> per_split;
  bool law = true;
  for (const auto& s : ds.samples) {
    law = law && text::codepoint_count(s.text) == 500;
    auto& p = per_pair[s.pair_id];
    (s.label == Label::human ? p.first : p.second)++;
    auto& q = per_split[ds.split_of(s.pair_id).value()];
    (s.label == Label::human ? q.first : q.second)++;
  }
  o.check(law, "a text is not exactly 500 code points");
  bool pairs_ok = true;
  for (const auto& [id, p] : per_pair) pairs_ok = pairs_ok && p.first == 1 && p.second == 1;
  o.check(pairs_ok, "a pair is not one human plus one machine text");
  bool balanced = true;
  for (const auto& [sp, q] : per_split) balanced = balanced && q.first == q.second;
  o.check(balanced, "a split is unbalanced");
  std::set<std::string> seen;
  bool cohesive = true;
  for (const auto& [sp, ids] : ds.splits) {
    for (const auto& id : ids) cohesive = cohesive && seen.insert(id).second;
  }
  o.check(cohesive && seen.size() == 200, "a pair is in more than one split");

  AttackOptions ao;
  ao.base_params.seed = 5;
  ao.avg_chars_per_token = 5.0;
  std::multiset<std::string> base_humans, attack_humans;
  for (const auto* s : ds.samples_in(Split::test)) {
    if (s->label == Label::human) base_humans.insert(s->text);
  }
  for (const char* id : {"high_temperature", "tweet_prompt"}) {
    const auto atk = apply_attack(find_attack(id), ds, gen, ao);
    attack_humans.clear();
    for (const auto& s : atk.samples) {
      if (s.label == Label::human) attack_humans.insert(s.text);
    }
    o.check(attack_humans == base_humans, std::string(id) + " changed human texts");
  }

  const auto again = testsupport::build_dataset(gen, 200, 5, "mock");
  testsupport::TempDir tmp;
  save_dataset(ds, tmp / "a");
  save_dataset(again, tmp / "b");
  o.check(fs::read_file(tmp / "a" / "samples.jsonl") == fs::read_file(tmp / "b" / "samples.jsonl") &&
              fs::read_file(tmp / "a" / "manifest.json") == fs::read_file(tmp / "b" / "manifest.json"),
          "rebuild is not byte-identical");
  const double secs = seconds_since(t0);
  o.check(secs < 30.0, "took " + fmt(secs, 1) + " s");
  if (o.ok) o.detail = "200 pairs: integrity, 500-char law, balance, cohesion, human fixity, byte-identical rebuild in " + fmt(secs, 2) + " s";
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome attack_contracts() {
  Outcome o;
  testsupport::ScriptedBackend gen("mockgen", PromptMode::chat);
  const auto ds = testsupport::build_dataset(gen, 60, 5, "mock");
  AttackOptions ao;
  ao.base_params.seed = 5;
  ao.avg_chars_per_token = 5.0;
  const auto none = apply_attack(find_attack("none"), ds, gen, ao).manifest.generation.at("generation_params");
  for (const auto& [id, knob] : std::vector<std::pair<std::string, std::string>>{{"high_temperature", "temperature"},
                                                                                 {"repetition_penalty", "repetition_penalty"}}) {
    const auto p = apply_attack(find_attack(id), ds, gen, ao).manifest.generation.at("generation_params");
    const auto diff = nlohmann::json::diff(none, p);
    o.check(diff.size() == 1 && diff[0]["path"] == "/" + knob && p[knob] == 1.2,
            id + " manifest diff: " + diff.dump());
  }

  // Thresholds come from the unattacked eval split and stay fixed.
  SyntheticDetector det("syn", {});
  det.register_dataset(ds);
  auto hot = apply_attack(find_attack("high_temperature"), ds, gen, ao);
  det.register_dataset(hot);
  const auto th = calibrate_on_dataset(det, ds);
  const auto before = calibration_count();
  const auto g = evaluate_matrix({&det}, {target_for(ds), target_for(hot)}, {{"syn", th}});
  o.check(calibration_count() == before, "evaluation calibrated a threshold");
  bool refused = false;
  try {
    calibrate_on_dataset(det, hot);
  } catch (const ConfigError&) {
    refused = true;
  }
  o.check(refused && hot.calibration_locked, "attack set accepted for calibration");
  o.check(g.cells.size() == 2 && g.cells[0].threshold == th.value && g.cells[1].threshold == th.value,
          "attack cell used a different threshold");

  const auto fx = nlohmann::json::parse(fs::read_file(stdfs::path(MGTBENCH_SOURCE_DIR) / "tests/fixtures/prompt_catalog.json"));
  auto same = [&](const PromptTemplate& t, const std::string& key) {
    const bool eq = t.system.value_or("") == fx[key]["system"].get<std::string>() && t.user == fx[key]["user"].get<std::string>();
    o.check(eq, key + " differs from the transcribed prompt");
    return eq;
  };
  int equal = 0;
  equal += same(default_chat_template(), "chat_default");
  for (const char* id : {"news_prompt", "tweet_prompt", "example_prompt", "paraphrase"}) {
    equal += same(*find_attack(id).template_override, id);
  }
  const auto decoding_templates = static_cast<int>(find_attack("high_temperature").template_override.has_value()) +
                                  static_cast<int>(find_attack("repetition_penalty").template_override.has_value());
  o.check(decoding_templates == 0, "a decoding attack carries a template");
  o.check(list_attacks().size() == 7, "catalog does not hold six attacks plus none");
  if (o.ok) o.detail = "single-knob diffs hold, no recalibration under attack, " + std::to_string(equal) + "/5 prompts string-equal";
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome curvature_sanity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto model = std::make_shared<CyclicMarkovModel>(std::vector<double>{0.6, 0.3, 0.1});
  Rng rng(5);

  const auto text = sample_sequence(*model, 30, rng);
  const auto tables = position_tables(*model, *model, text);
  const auto a = analytic_moments(tables, text);
  const auto mc = monte_carlo_moments(tables, text, 1000000, rng);
  const double sigma = std::sqrt(a.variance / 1e6);
  const double gap = std::abs(mc.expected - a.expected);
  o.check(gap <= 3 * sigma, "Monte-Carlo mean off by " + fmt(gap / sigma, 2) + " sigma");
  o.check(std::abs(mc.score() - a.score()) <= 0.01, "scores " + fmt(a.score()) + " vs " + fmt(mc.score()));

  CurvatureDetector det("fd", model, model, {"cyclic", "cyclic"});
  double sum = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) sum += det.score(model->tokenizer().decode(sample_sequence(*model, 50, rng)));
  const double mean = sum / n;
  o.check(std::abs(mean) < 0.05, "mean score of sampled text " + fmt(mean));
  const double greedy = det.score(model->tokenizer().decode(greedy_sequence(*model, 50)));
  o.check(greedy > 0, "greedy text score " + fmt(greedy));
  const double secs = seconds_since(t0);
  o.check(secs < 60, "took " + fmt(secs, 1) + " s");
  if (o.ok) {
    o.detail = "analytic vs 1e6-sample MC " + fmt(gap / sigma, 2) + " sigma apart; sampled-text mean " + fmt(mean) +
               "; greedy " + fmt(greedy, 2) + "; " + fmt(secs, 1) + " s";
  }
  return o;
}

// --- 6 ---------------------------------------------------------------------

nlohmann::json separable_config() {
  auto gen = [](const std::string& name, const std::string& kind, const std::string& reg, int seed) {
    return nlohmann::json{{"name", name}, {"kind", kind}, {"top_p", 0.9},
                          {"train", {{"synthetic", {{"register", reg}, {"articles", 200}, {"seed", seed}}}}}};
  };
  return {{"schema_version", 1},
          {"output_dir", "out"},
          {"seed", 13},
          {"target_fpr", 0.05},
          {"corpus", {{"path", "corpus.jsonl"}}},
          {"splits", {0.5, 0.25, 0.25}},
          {"generation", {{"max_new_tokens", 150}}},
          {"avg_chars_per_token", 5.0},
          {"generators", {gen("gen-a", "completion", "machine-a", 11), gen("gen-chat", "chat", "machine-chat", 14)}},
          {"attacks", {{"targets", {"gen-chat"}}, {"ids", {"high_temperature"}}}},
          {"calibration_dataset", "gen-chat"},
          {"detectors", {{{"id", "separable"}, {"type", "synthetic"}, {"machine_mean", 0.8}, {"human_mean", 0.2}, {"sd", 0.1}}}}};
}

Outcome separable_end_to_end() {
  Outcome o;
  std::vector<std::string> cells;
  for (int round = 0; round < 2; ++round) {
    testsupport::TempDir dir("mgtacc");
    std::string out;
    if (testsupport::run_cli("make-corpus -n 800 --seed 3 -o " + (dir / "corpus.jsonl").string(), &out) != 0) {
      o.check(false, "make-corpus failed: " + out);
      return o;
    }
    fs::atomic_write(dir / "exp.json", separable_config().dump(2));
    const int rc = testsupport::run_cli("run -q --run-id sep --started-at 2024-01-01T00:00:00Z -c " + (dir / "exp.json").string(), &out);
    if (rc != 0) {
      o.check(false, "run exited " + std::to_string(rc) + ": " + out);
      return o;
    }
    const auto run = load_run(dir.path() / "out" / "runs" / "sep");
    cells.push_back(fs::read_file(dir.path() / "out" / "runs" / "sep" / "cells.json"));
    if (round) continue;
    const auto& th = run.grid.thresholds.at(0);
    const auto* cell = run.grid.find("separable", "gen-chat", "none");
    o.check(th.achieved_fpr_on_eval <= 0.05, "eval FPR " + fmt(th.achieved_fpr_on_eval));
    o.check(cell && cell->tpr && *cell->tpr >= 0.97 && *cell->tpr <= 1.0, "test TPR " + (cell && cell->tpr ? fmt(*cell->tpr) : "absent"));
    if (o.ok) {
      o.detail = "eval FPR " + fmt(th.achieved_fpr_on_eval, 3) + " (n=" + std::to_string(th.n_human) + "), test TPR " +
                 fmt(*cell->tpr, 3) + " (n=" + std::to_string(cell->n_machine) + ")";
    }
  }
  o.check(cells[0] == cells[1], "two seeded runs gave different cells.json");
  if (o.ok) o.detail += ", cells.json identical across runs";
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome desk_directional() {
  Outcome o;
  testsupport::TempDir dir("mgtdesk");
  auto cfg = nlohmann::json::parse(fs::read_file(stdfs::path(MGTBENCH_SOURCE_DIR) / "configs/desk.json"));
  cfg["output_dir"] = "out";
  fs::atomic_write(dir / "desk.json", cfg.dump(2));
  std::string out;
  const int rc = testsupport::run_cli("run -q --run-id desk -c " + (dir / "desk.json").string(), &out);
  if (rc != 0) {
    o.check(false, "desk run exited " + std::to_string(rc) + ": " + out);
    return o;
  }
  const auto run = load_run(dir.path() / "out" / "runs" / "desk");
  const auto tpr = [&](const std::string& det, const std::string& ds, const std::string& atk) -> double {
    const auto* c = run.grid.find(det, ds, atk);
    return c && c->tpr ? *c->tpr : NAN;
  };
  const auto fpr = [&](const std::string& det, const std::string& ds) -> double {
    for (const auto& h : run.grid.human_only) {
      if (h.detector_id == det && h.dataset_id == ds) return h.fpr;
    }
    return NAN;
  };
  const double base = tpr("curvature", "gen-chat", "none"), hot = tpr("curvature", "gen-chat", "high_temperature");
  const long drop = std::lround(100 * (base - hot));
  o.check(drop >= 10, "(a) high temperature moved curvature TPR by " + std::to_string(-drop) + " points");
  const double own = tpr("distil-a", "gen-a", "none");
  o.check(own >= 0.85, "(b) fine-tuned TPR on its own generator " + fmt(own, 3));
  const double fin = fpr("distil-rr", "in-distribution"), fsh = fpr("distil-rr", "shifted");
  o.check(fsh > fin, "(c) shifted FPR " + fmt(fsh, 3) + " vs in-distribution " + fmt(fin, 3));
  if (o.ok) {
    o.detail = "(a) curvature " + fmt(100 * base, 0) + "% -> " + fmt(100 * hot, 0) + "% (-" + std::to_string(drop) +
               " pts); (b) distil-a on gen-a " + fmt(100 * own, 0) + "%; (c) distil-rr human FPR " + fmt(100 * fin, 0) +
               "% -> " + fmt(100 * fsh, 0) + "% shifted";
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"calibration oracle", calibration_oracle},     {"metric oracles", metric_oracles},
      {"pipeline invariants", pipeline_invariants},   {"attack contracts", attack_contracts},
      {"curvature sanity", curvature_sanity},         {"separable end-to-end", separable_end_to_end},
      {"desk directional", desk_directional},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.ok;
    std::cout << "criterion " << i + 1 << " [" << criteria[i].first << "]: " << (o.ok ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
