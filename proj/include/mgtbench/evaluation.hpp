#pragma once

// Threshold calibration, confusion metrics, ROC-AUC, binomial intervals and
// the detector x dataset x attack evaluation grid.
//
// Decision rule everywhere: predict machine iff score >= threshold.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/detectors.hpp"
#include "mgtbench/errors.hpp"

namespace mgtbench {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr const char* kBaselineAttack = "none";

// "at most": best TPR with FPR <= target. "closest": FPR nearest the target
// from either side (ties go to the higher TPR).
enum class FprRule { at_most, closest };
// Where the threshold sits inside the gap that yields the chosen counts:
// on the lowest flagged score, or halfway to the next lower score.
enum class ThresholdPlacement { at_score, midpoint };

struct CalibrationOptions {
  double target_fpr = 0.05;
  FprRule rule = FprRule::at_most;
  ThresholdPlacement placement = ThresholdPlacement::at_score;
};

struct Threshold {
  std::string detector_id;
  std::string calibration_dataset_id;
  double target_fpr = 0.05;
  double value = kInf;
  double achieved_fpr_on_eval = 0.0;
  double achieved_tpr_on_eval = 0.0;
  std::size_t n_human = 0;
  std::size_t n_machine = 0;
  // Set when no finite threshold meets the target (heavy ties).
  bool degenerate = false;

  friend bool operator==(const Threshold&, const Threshold&) = default;
};

namespace detail {
inline std::atomic<std::size_t>& calibration_counter() {
  static std::atomic<std::size_t> n{0};
  return n;
}

inline std::size_t count_at_least(const std::vector<double>& sorted, double t) {
  return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}
}  // namespace detail

// Number of calibrations performed in this process. Lets callers check that
// evaluation paths never recalibrate.
inline std::size_t calibration_count() { return detail::calibration_counter().load(); }

inline Threshold calibrate_threshold(std::vector<double> human, std::vector<double> machine,
                                     const CalibrationOptions& opts = {}) {
  if (human.empty() || machine.empty()) throw MetricError("calibration needs both human and machine scores");
  if (!(opts.target_fpr > 0.0 && opts.target_fpr < 1.0)) throw ConfigError("target_fpr must be in (0,1)");
  for (double s : human) if (!std::isfinite(s)) throw MetricError("non-finite human score");
  for (double s : machine) if (!std::isfinite(s)) throw MetricError("non-finite machine score");
  ++detail::calibration_counter();

  std::sort(human.begin(), human.end());
  std::sort(machine.begin(), machine.end());
  std::vector<double> cand;
  cand.reserve(human.size() + machine.size() + 1);
  std::merge(human.begin(), human.end(), machine.begin(), machine.end(), std::back_inserter(cand));
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  const std::vector<double> unique = cand;
  cand.push_back(kInf);

  const double nh = static_cast<double>(human.size());
  const double nm = static_cast<double>(machine.size());
  std::size_t best = cand.size() - 1;
  double best_tpr = -1.0, best_fpr = 2.0;
  bool found = false;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const double fpr = static_cast<double>(detail::count_at_least(human, cand[i])) / nh;
    const double tpr = static_cast<double>(detail::count_at_least(machine, cand[i])) / nm;
    bool better;
    if (opts.rule == FprRule::at_most) {
      if (fpr > opts.target_fpr) continue;
      better = !found || tpr > best_tpr || (tpr == best_tpr && fpr < best_fpr);
    } else {
      const double d = std::abs(fpr - opts.target_fpr), bd = std::abs(best_fpr - opts.target_fpr);
      better = !found || d < bd || (d == bd && tpr > best_tpr);
    }
    if (better) {
      found = true;
      best = i;
      best_tpr = tpr;
      best_fpr = fpr;
    }
  }

  Threshold t;
  t.target_fpr = opts.target_fpr;
  t.n_human = human.size();
  t.n_machine = machine.size();
  t.value = cand[best];
  t.achieved_fpr_on_eval = best_fpr;
  t.achieved_tpr_on_eval = best_tpr;
  t.degenerate = best == cand.size() - 1;
  if (opts.placement == ThresholdPlacement::midpoint && best < unique.size()) {
    t.value = best == 0 ? -kInf : 0.5 * (unique[best - 1] + unique[best]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Confusion

struct Confusion {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  // Absent when the class it is conditioned on has no samples.
  std::optional<double> tpr, fpr;
  double accuracy = 0.0;
};

inline Confusion compute_confusion(const std::vector<double>& scores, const std::vector<Label>& labels,
                                   double threshold) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
  if (scores.empty()) throw MetricError("no samples");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (labels[i] == Label::machine) {
      (flagged ? c.tp : c.fn)++;
    } else {
      (flagged ? c.fp : c.tn)++;
    }
  }
  if (c.tp + c.fn) c.tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.fp + c.tn) c.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  c.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
  return c;
}

// P(random machine score > random human score), ties counted as half.
// Computed from exact integer counts.
inline double roc_auc(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
  std::vector<double> human, machine;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == Label::machine ? machine : human).push_back(scores[i]);
  if (human.empty() || machine.empty()) throw MetricError("ROC-AUC needs both classes");
  std::sort(human.begin(), human.end());
  unsigned long long twice_wins = 0;
  for (double m : machine) {
    const auto lo = std::lower_bound(human.begin(), human.end(), m);
    const auto hi = std::upper_bound(lo, human.end(), m);
    twice_wins += 2ULL * static_cast<unsigned long long>(lo - human.begin()) + static_cast<unsigned long long>(hi - lo);
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(human.size()) * static_cast<double>(machine.size()));
}

enum class CiMethod { wald, wilson };

// Standard normal quantile (Acklam's rational approximation, ~1e-9).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw MetricError("quantile outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  if (p < lo) {
    const double q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > 1 - lo) return -normal_quantile(1 - p);
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

inline double z_for_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw MetricError("confidence level must be in (0,1)");
  if (level == 0.95) return 1.959964;
  return normal_quantile(0.5 + level / 2.0);
}

// Half-width of the binomial confidence interval for a proportion.
inline double binomial_ci(double p_hat, std::size_t n, double level = 0.95, CiMethod method = CiMethod::wald) {
  if (n == 0) throw MetricError("binomial_ci needs n >= 1");
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw MetricError("proportion outside [0,1]");
  const double z = z_for_level(level);
  const double nn = static_cast<double>(n);
  if (method == CiMethod::wald) return z * std::sqrt(p_hat * (1.0 - p_hat) / nn);
  const double z2 = z * z;
  return z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn)) / (1.0 + z2 / nn);
}

// ---------------------------------------------------------------------------
// Dataset-level helpers

struct LabeledScores {
  std::vector<double> scores;
  std::vector<Label> labels;
  std::size_t failed = 0;

  std::vector<double> of(Label l) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < scores.size(); ++i) if (labels[i] == l) out.push_back(scores[i]);
    return out;
  }
};

inline LabeledScores score_split(Detector& detector, const PairedDataset& ds, Split split,
                                 const ScoreOptions& sopts = {}) {
  std::vector<std::string> texts;
  std::vector<Label> labels;
  for (const auto* s : ds.samples_in(split)) {
    texts.push_back(s->text);
    labels.push_back(s->label);
  }
  if (texts.empty()) throw InputError("dataset '" + ds.dataset_id + "' has an empty " + to_string(split) + " split");
  const auto scored = score_batch(detector, texts, sopts);
  LabeledScores out;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (!scored[i]) {
      ++out.failed;
      continue;
    }
    out.scores.push_back(*scored[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

// Calibrates on the eval split of an unattacked dataset.
inline Threshold calibrate_on_dataset(Detector& detector, const PairedDataset& ds, const CalibrationOptions& opts = {},
                                      const ScoreOptions& sopts = {}) {
  if (ds.calibration_locked) {
    throw ConfigError("dataset '" + ds.dataset_id + "' is an attack set; thresholds come from the unattacked eval split");
  }
  const auto ls = score_split(detector, ds, Split::eval, sopts);
  Threshold t = calibrate_threshold(ls.of(Label::human), ls.of(Label::machine), opts);
  t.detector_id = detector.id();
  t.calibration_dataset_id = ds.dataset_id;
  return t;
}

// ---------------------------------------------------------------------------
// Grid

struct CellReport {
  std::string detector_id;
  std::string dataset_id;
  std::string attack_id;
  std::optional<double> tpr;
  std::optional<double> fpr;
  std::size_t n_machine = 0;
  std::size_t n_human = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t failed = 0;
  double threshold = kInf;
  double ci_halfwidth_tpr = 0.0;
  std::optional<double> roc_auc;

  auto key() const { return std::tie(detector_id, dataset_id, attack_id); }
  friend bool operator==(const CellReport&, const CellReport&) = default;
};

struct HumanOnlyReport {
  std::string detector_id;
  std::string dataset_id;
  double accuracy = 0.0;
  double fpr = 0.0;
  std::size_t n = 0;
  std::size_t failed = 0;
  double ci_halfwidth = 0.0;

  friend bool operator==(const HumanOnlyReport&, const HumanOnlyReport&) = default;
};

struct Grid {
  std::vector<CellReport> cells;
  std::vector<Threshold> thresholds;
  std::vector<HumanOnlyReport> human_only;
  nlohmann::json manifest = nlohmann::json::object();

  const CellReport* find(const std::string& det, const std::string& ds, const std::string& attack) const {
    for (const auto& c : cells) {
      if (c.detector_id == det && c.dataset_id == ds && c.attack_id == attack) return &c;
    }
    return nullptr;
  }

  void sort() {
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
    std::sort(thresholds.begin(), thresholds.end(), [](const auto& a, const auto& b) {
      return std::tie(a.detector_id, a.calibration_dataset_id) < std::tie(b.detector_id, b.calibration_dataset_id);
    });
    std::sort(human_only.begin(), human_only.end(), [](const auto& a, const auto& b) {
      return std::tie(a.detector_id, a.dataset_id) < std::tie(b.detector_id, b.dataset_id);
    });
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

// One test set in the grid: an unattacked dataset or an attack set built
// from it. `dataset_id` is the generator dataset the cell is filed under.
struct EvalTarget {
  std::string dataset_id;
  std::string attack_id = kBaselineAttack;
  const PairedDataset* data = nullptr;
};

inline EvalTarget target_for(const PairedDataset& ds) {
  EvalTarget t;
  t.data = &ds;
  if (ds.attack) {
    t.attack_id = *ds.attack;
    t.dataset_id = ds.manifest.generation.value("base_dataset", ds.dataset_id);
  } else {
    t.dataset_id = ds.dataset_id;
  }
  return t;
}

struct EvalOptions {
  double ci_level = 0.95;
  CiMethod ci_method = CiMethod::wald;
  ScoreOptions score{};
};

inline CellReport evaluate_cell(Detector& detector, const Threshold& threshold, const EvalTarget& target,
                                const EvalOptions& opts = {}) {
  const auto ls = score_split(detector, *target.data, Split::test, opts.score);
  CellReport c;
  c.detector_id = detector.id();
  c.dataset_id = target.dataset_id;
  c.attack_id = target.attack_id;
  c.threshold = threshold.value;
  c.failed = ls.failed;
  if (ls.scores.empty()) throw MetricError("no scored samples for cell " + c.detector_id + "/" + c.dataset_id + "/" + c.attack_id);
  const auto conf = compute_confusion(ls.scores, ls.labels, threshold.value);
  c.n_machine = conf.tp + conf.fn;
  c.n_human = conf.fp + conf.tn;
  c.tp = conf.tp;
  c.fp = conf.fp;
  c.tpr = conf.tpr;
  c.fpr = conf.fpr;
  if (c.tpr) c.ci_halfwidth_tpr = binomial_ci(*c.tpr, c.n_machine, opts.ci_level, opts.ci_method);
  if (c.n_machine && c.n_human) c.roc_auc = roc_auc(ls.scores, ls.labels);
  return c;
}

// Evaluates every detector on every target with its fixed threshold. Attack
// sets reuse the unattacked threshold; nothing here calibrates.
inline Grid evaluate_matrix(const std::vector<Detector*>& detectors, const std::vector<EvalTarget>& targets,
                            const std::map<std::string, Threshold>& thresholds, const EvalOptions& opts = {}) {
  Grid g;
  for (auto* d : detectors) {
    auto it = thresholds.find(d->id());
    if (it == thresholds.end()) {
      const std::string where = targets.empty() ? std::string("(no cells)")
                                                : d->id() + "/" + targets.front().dataset_id + "/" + targets.front().attack_id;
      throw ConfigError("no calibrated threshold for detector '" + d->id() + "' (cell " + where + ")");
    }
    g.thresholds.push_back(it->second);
    for (const auto& t : targets) g.cells.push_back(evaluate_cell(*d, it->second, t, opts));
  }
  g.sort();
  return g;
}

inline HumanOnlyReport evaluate_human_only(Detector& detector, const Threshold& threshold,
                                           const std::vector<std::string>& human_texts,
                                           const std::string& dataset_id = "human", const EvalOptions& opts = {}) {
  if (human_texts.empty()) throw MetricError("human-only evaluation needs at least one text");
  const auto scored = score_batch(detector, human_texts, opts.score);
  HumanOnlyReport r;
  r.detector_id = detector.id();
  r.dataset_id = dataset_id;
  std::size_t flagged = 0;
  for (const auto& s : scored) {
    if (!s) {
      ++r.failed;
      continue;
    }
    ++r.n;
    if (*s >= threshold.value) ++flagged;
  }
  if (r.n == 0) throw MetricError("every human-only text failed to score");
  r.fpr = static_cast<double>(flagged) / static_cast<double>(r.n);
  r.accuracy = 1.0 - r.fpr;
  r.ci_halfwidth = binomial_ci(r.accuracy, r.n, opts.ci_level, opts.ci_method);
  return r;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline nlohmann::json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}
inline double real_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j == "inf") return kInf;
    if (j == "-inf") return -kInf;
    throw VersionError("bad real value " + j.dump());
  }
  return j.get<double>();
}
inline nlohmann::json opt_to_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace detail

inline nlohmann::json threshold_to_json(const Threshold& t) {
  return {{"detector", t.detector_id}, {"calibration_dataset", t.calibration_dataset_id},
          {"target_fpr", t.target_fpr}, {"value", detail::real_to_json(t.value)},
          {"achieved_fpr_on_eval", t.achieved_fpr_on_eval}, {"achieved_tpr_on_eval", t.achieved_tpr_on_eval},
          {"n_human", t.n_human}, {"n_machine", t.n_machine}, {"degenerate", t.degenerate}};
}

inline Threshold threshold_from_json(const nlohmann::json& j) {
  Threshold t;
  t.detector_id = j.at("detector");
  t.calibration_dataset_id = j.at("calibration_dataset");
  t.target_fpr = j.at("target_fpr");
  t.value = detail::real_from_json(j.at("value"));
  t.achieved_fpr_on_eval = j.at("achieved_fpr_on_eval");
  t.achieved_tpr_on_eval = j.at("achieved_tpr_on_eval");
  t.n_human = j.at("n_human");
  t.n_machine = j.at("n_machine");
  t.degenerate = j.at("degenerate");
  return t;
}

inline nlohmann::json cell_to_json(const CellReport& c) {
  return {{"detector", c.detector_id}, {"dataset", c.dataset_id}, {"attack", c.attack_id},
          {"tpr", detail::opt_to_json(c.tpr)}, {"fpr", detail::opt_to_json(c.fpr)},
          {"ci", c.ci_halfwidth_tpr}, {"auc", detail::opt_to_json(c.roc_auc)},
          {"n_machine", c.n_machine}, {"n_human", c.n_human}, {"tp", c.tp}, {"fp", c.fp},
          {"failed", c.failed}, {"threshold", detail::real_to_json(c.threshold)}};
}

inline CellReport cell_from_json(const nlohmann::json& j) {
  CellReport c;
  c.detector_id = j.at("detector");
  c.dataset_id = j.at("dataset");
  c.attack_id = j.at("attack");
  c.tpr = detail::opt_from_json(j.at("tpr"));
  c.fpr = detail::opt_from_json(j.at("fpr"));
  c.ci_halfwidth_tpr = j.at("ci");
  c.roc_auc = detail::opt_from_json(j.at("auc"));
  c.n_machine = j.at("n_machine");
  c.n_human = j.at("n_human");
  c.tp = j.at("tp");
  c.fp = j.at("fp");
  c.failed = j.at("failed");
  c.threshold = detail::real_from_json(j.at("threshold"));
  return c;
}

inline nlohmann::json human_only_to_json(const HumanOnlyReport& r) {
  return {{"detector", r.detector_id}, {"dataset", r.dataset_id}, {"accuracy", r.accuracy}, {"fpr", r.fpr},
          {"n", r.n}, {"failed", r.failed}, {"ci", r.ci_halfwidth}};
}

inline HumanOnlyReport human_only_from_json(const nlohmann::json& j) {
  return {j.at("detector"), j.at("dataset"), j.at("accuracy"), j.at("fpr"), j.at("n"), j.at("failed"), j.at("ci")};
}

inline nlohmann::json grid_to_json(const Grid& g) {
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : g.cells) j["cells"].push_back(cell_to_json(c));
  j["thresholds"] = nlohmann::json::array();
  for (const auto& t : g.thresholds) j["thresholds"].push_back(threshold_to_json(t));
  j["human_only"] = nlohmann::json::array();
  for (const auto& h : g.human_only) j["human_only"].push_back(human_only_to_json(h));
  j["manifest"] = g.manifest;
  return j;
}

inline Grid grid_from_json(const nlohmann::json& j) {
  Grid g;
  for (const auto& c : j.at("cells")) g.cells.push_back(cell_from_json(c));
  for (const auto& t : j.at("thresholds")) g.thresholds.push_back(threshold_from_json(t));
  if (j.contains("human_only")) {
    for (const auto& h : j.at("human_only")) g.human_only.push_back(human_only_from_json(h));
  }
  g.manifest = j.value("manifest", nlohmann::json::object());
  return g;
}

}  // namespace mgtbench
