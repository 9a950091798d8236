#pragma once

// Attack-delta tables, SVG figures, and the per-run artifact directory.
// Renderers only format numbers already stored in the grid.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/digest.hpp"
#include "mgtbench/evaluation.hpp"
#include "mgtbench/fsutil.hpp"

namespace mgtbench {

inline constexpr int kRunSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Number formatting

// Half-up rounding to an integer; the epsilon absorbs binary noise such as
// 100 * (0.54 - 0.88) = -34.000000000000004.
inline long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5 + 1e-9)); }

inline std::string fmt_percent(double p) { return std::to_string(round_half_up(100.0 * p)) + "%"; }

// Integer percent, one decimal below 1% ("0.4%").
inline std::string fmt_ci(double halfwidth) {
  const double pct = 100.0 * halfwidth;
  if (round_half_up(pct) >= 1) return std::to_string(round_half_up(pct)) + "%";
  if (pct == 0.0) return "0%";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", std::floor(pct * 10.0 + 0.5 + 1e-9) / 10.0);
  return buf;
}

inline long delta_points(double tpr, double baseline) { return round_half_up(100.0 * (tpr - baseline)); }

inline std::string fmt_delta(long d) {
  if (d > 0) return "+" + std::to_string(d);
  return std::to_string(d);
}

inline std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Tables

namespace detail {

template <typename T>
std::vector<T> ordered_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Baseline first, then the remaining attacks in catalog-name order.
inline std::vector<std::string> attack_columns(const Grid& g, const std::string& baseline) {
  std::vector<std::string> all;
  for (const auto& c : g.cells) if (c.attack_id != baseline) all.push_back(c.attack_id);
  auto rest = ordered_unique(all);
  rest.insert(rest.begin(), baseline);
  return rest;
}

// 2 = best, 1 = second best, 0 otherwise, per value among `col`.
inline int rank_mark(double v, const std::vector<double>& col) {
  auto u = ordered_unique(col);
  std::reverse(u.begin(), u.end());
  if (!u.empty() && v == u[0]) return 2;
  if (u.size() > 1 && v == u[1]) return 1;
  return 0;
}

}  // namespace detail

// One markdown table per dataset: rows are detectors, columns attacks. Each
// attacked cell shows the change in TPR points against the baseline column.
// Bold marks the best detector in a column, italics the second best.
inline std::string render_attack_table(const Grid& g, const std::string& baseline = kBaselineAttack) {
  std::vector<std::string> ds_all, det_all;
  for (const auto& c : g.cells) {
    ds_all.push_back(c.dataset_id);
    det_all.push_back(c.detector_id);
  }
  const auto datasets = detail::ordered_unique(ds_all);
  const auto detectors = detail::ordered_unique(det_all);
  const auto attacks = detail::attack_columns(g, baseline);

  std::ostringstream out;
  for (const auto& ds : datasets) {
    for (const auto& det : detectors) {
      bool any = false;
      for (const auto& a : attacks) any = any || g.find(det, ds, a);
      if (any && !g.find(det, ds, baseline)) {
        throw ReportError("missing baseline cell (" + det + ", " + ds + ", " + baseline + ")");
      }
    }
    out << "### " << ds << "\n\n| Detector |";
    for (const auto& a : attacks) out << " " << a << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < attacks.size(); ++i) out << "---|";
    out << "\n";

    std::map<std::string, std::vector<double>> columns;
    for (const auto& a : attacks) {
      for (const auto& det : detectors) {
        if (const auto* c = g.find(det, ds, a); c && c->tpr) columns[a].push_back(*c->tpr);
      }
    }
    for (const auto& det : detectors) {
      const auto* base = g.find(det, ds, baseline);
      if (!base) continue;
      out << "| " << det << " |";
      for (const auto& a : attacks) {
        const auto* c = g.find(det, ds, a);
        if (!c || !c->tpr) {
          out << " - |";
          continue;
        }
        std::string v = fmt_percent(*c->tpr);
        const int mark = detail::rank_mark(*c->tpr, columns[a]);
        if (mark == 2) v = "**" + v + "**";
        if (mark == 1) v = "*" + v + "*";
        out << " ";
        if (a != baseline && base->tpr) out << "(" << fmt_delta(delta_points(*c->tpr, *base->tpr)) << ") ";
        out << v << " ± " << fmt_ci(c->ci_halfwidth_tpr) << " |";
      }
      out << "\n";
    }
    out << "\n";
  }
  return out.str();
}

// Accuracy on human-only corpora; the first column (in-distribution) is the
// reference for the deltas.
inline std::string render_human_only_table(const Grid& g, const std::string& reference_dataset) {
  if (g.human_only.empty()) return "";
  std::vector<std::string> ds_all, det_all;
  for (const auto& h : g.human_only) {
    ds_all.push_back(h.dataset_id);
    det_all.push_back(h.detector_id);
  }
  auto datasets = detail::ordered_unique(ds_all);
  if (auto it = std::find(datasets.begin(), datasets.end(), reference_dataset); it != datasets.end()) {
    datasets.erase(it);
    datasets.insert(datasets.begin(), reference_dataset);
  }
  auto find = [&](const std::string& det, const std::string& ds) -> const HumanOnlyReport* {
    for (const auto& h : g.human_only) if (h.detector_id == det && h.dataset_id == ds) return &h;
    return nullptr;
  };
  std::ostringstream out;
  out << "| Detector |";
  for (const auto& d : datasets) out << " " << d << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) out << "---|";
  out << "\n";
  for (const auto& det : detail::ordered_unique(det_all)) {
    out << "| " << det << " |";
    const auto* ref = find(det, datasets.front());
    for (const auto& ds : datasets) {
      const auto* h = find(det, ds);
      if (!h) {
        out << " - |";
        continue;
      }
      out << " ";
      if (ref && h != ref) out << "(" << fmt_delta(delta_points(h->accuracy, ref->accuracy)) << ") ";
      out << fmt_percent(h->accuracy) << " ± " << fmt_ci(h->ci_halfwidth) << " |";
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Figures

enum class HeatmapMetric { tpr_at_fpr, roc_auc };

inline HeatmapMetric parse_heatmap_metric(std::string_view s) {
  if (s == "tpr_at_fpr") return HeatmapMetric::tpr_at_fpr;
  if (s == "roc_auc") return HeatmapMetric::roc_auc;
  throw ConfigError("unknown heatmap metric '" + std::string(s) + "'");
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// White to dark blue.
inline std::string ramp(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - v * (255 - 8)));
  const int gg = static_cast<int>(std::lround(255 - v * (255 - 48)));
  const int b = static_cast<int>(std::lround(255 - v * (255 - 107)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, gg, b);
  return buf;
}

}  // namespace detail

// Matrix of one metric over (detector rows, dataset columns) for one attack.
inline std::string render_heatmap(const Grid& g, const std::vector<std::string>& rows,
                                  const std::vector<std::string>& cols, HeatmapMetric metric,
                                  const std::string& attack = kBaselineAttack) {
  std::vector<std::string> missing;
  for (const auto& r : rows) {
    for (const auto& c : cols) {
      const auto* cell = g.find(r, c, attack);
      const bool ok = cell && (metric == HeatmapMetric::tpr_at_fpr ? cell->tpr.has_value() : cell->roc_auc.has_value());
      if (!ok) missing.push_back("(" + r + ", " + c + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "grid is missing cells:";
    for (const auto& m : missing) msg += " " + m;
    throw ReportError(msg);
  }
  const int cw = 90, ch = 40, left = 180, top = 110;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cw * static_cast<int>(cols.size()) + 20
    << "\" height=\"" << top + ch * static_cast<int>(rows.size()) + 20 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"10\" y=\"20\" font-size=\"14\">" << (metric == HeatmapMetric::tpr_at_fpr ? "TPR at calibrated FPR" : "ROC-AUC")
    << " (" << detail::xml_escape(attack) << ")</text>\n";
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const int x = left + cw * static_cast<int>(j) + cw / 2;
    s << "<text class=\"col\" x=\"" << x << "\" y=\"" << top - 8 << "\" text-anchor=\"start\" transform=\"rotate(-40 " << x
      << " " << top - 8 << ")\">" << detail::xml_escape(cols[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int y = top + ch * static_cast<int>(i);
    s << "<text class=\"row\" x=\"" << left - 8 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"end\">"
      << detail::xml_escape(rows[i]) << "</text>\n";
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto* cell = g.find(rows[i], cols[j], attack);
      const double v = metric == HeatmapMetric::tpr_at_fpr ? *cell->tpr : *cell->roc_auc;
      const int x = left + cw * static_cast<int>(j);
      const std::string label = metric == HeatmapMetric::tpr_at_fpr ? fmt_percent(v) : fmt_fixed(v, 2);
      nlohmann::json raw = v;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\""
        << detail::ramp(v) << "\" stroke=\"#ffffff\"/>\n";
      s << "<text class=\"cell\" data-row=\"" << detail::xml_escape(rows[i]) << "\" data-col=\""
        << detail::xml_escape(cols[j]) << "\" data-value=\"" << raw.dump() << "\" x=\"" << x + cw / 2 << "\" y=\""
        << y + ch / 2 + 4 << "\" text-anchor=\"middle\" fill=\"" << (v > 0.6 ? "#ffffff" : "#000000") << "\">" << label
        << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

// Grouped bars of TPR: one group per dataset, one bar per detector.
inline std::string render_bar_chart(const Grid& g, const std::vector<std::string>& detectors,
                                    const std::vector<std::string>& datasets, const std::string& attack = kBaselineAttack) {
  static const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"};
  const int bw = 18, gap = 24, plot_h = 200, left = 50, top = 30;
  const int group_w = bw * static_cast<int>(detectors.size()) + gap;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + group_w * static_cast<int>(datasets.size()) + 180
    << "\" height=\"" << top + plot_h + 80 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const int y = top + plot_h - plot_h * tick / 100;
    s << "<line x1=\"" << left << "\" x2=\"" << left + group_w * static_cast<int>(datasets.size()) << "\" y1=\"" << y
      << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << tick << "%</text>\n";
  }
  for (std::size_t j = 0; j < datasets.size(); ++j) {
    const int gx = left + group_w * static_cast<int>(j) + gap / 2;
    for (std::size_t i = 0; i < detectors.size(); ++i) {
      const auto* cell = g.find(detectors[i], datasets[j], attack);
      if (!cell || !cell->tpr) throw ReportError("grid is missing cell (" + detectors[i] + ", " + datasets[j] + ")");
      const int h = static_cast<int>(std::lround(*cell->tpr * plot_h));
      s << "<rect class=\"bar\" data-value=\"" << nlohmann::json(*cell->tpr).dump() << "\" x=\"" << gx + bw * static_cast<int>(i)
        << "\" y=\"" << top + plot_h - h << "\" width=\"" << bw - 2 << "\" height=\"" << h << "\" fill=\""
        << palette[i % 8] << "\"/>\n";
    }
    s << "<text x=\"" << gx + bw * static_cast<int>(detectors.size()) / 2 << "\" y=\"" << top + plot_h + 16
      << "\" text-anchor=\"middle\">" << detail::xml_escape(datasets[j]) << "</text>\n";
  }
  const int lx = left + group_w * static_cast<int>(datasets.size()) + 10;
  for (std::size_t i = 0; i < detectors.size(); ++i) {
    const int y = top + 16 * static_cast<int>(i);
    s << "<rect x=\"" << lx << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << palette[i % 8] << "\"/>\n";
    s << "<text x=\"" << lx + 14 << "\" y=\"" << y + 9 << "\">" << detail::xml_escape(detectors[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Run persistence

struct RunManifest {
  std::string run_id;
  std::string started_at;
  std::string finished_at;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> backend_versions;
  nlohmann::json dataset_manifests = nlohmann::json::array();
  std::vector<Threshold> thresholds;
  std::map<std::string, std::size_t> failure_counts;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

inline nlohmann::json run_manifest_to_json(const RunManifest& m) {
  nlohmann::json th = nlohmann::json::array();
  for (const auto& t : m.thresholds) th.push_back(threshold_to_json(t));
  return {{"run_id", m.run_id}, {"started_at", m.started_at}, {"finished_at", m.finished_at},
          {"config_hash", m.config_hash}, {"seeds", m.seeds}, {"backend_versions", m.backend_versions},
          {"dataset_manifests", m.dataset_manifests}, {"thresholds", th}, {"failure_counts", m.failure_counts}};
}

inline RunManifest run_manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.run_id = j.at("run_id");
  m.started_at = j.at("started_at");
  m.finished_at = j.at("finished_at");
  m.config_hash = j.at("config_hash");
  m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  m.backend_versions = j.at("backend_versions").get<std::map<std::string, std::string>>();
  m.dataset_manifests = j.at("dataset_manifests");
  for (const auto& t : j.at("thresholds")) m.thresholds.push_back(threshold_from_json(t));
  m.failure_counts = j.at("failure_counts").get<std::map<std::string, std::size_t>>();
  return m;
}

struct RunArtifacts {
  RunManifest manifest;
  Grid grid;

  friend bool operator==(const RunArtifacts&, const RunArtifacts&) = default;
};

struct PersistOptions {
  bool force = false;
  std::string reference_human_dataset;  // first column of the human-only table
};

inline std::string render_report(const RunArtifacts& run, const PersistOptions& opts = {}) {
  std::ostringstream md;
  md << "# Run " << run.manifest.run_id << "\n\n";
  md << "TPR at the calibrated threshold, with the change in points against the unattacked test set.\n\n";
  md << render_attack_table(run.grid);
  if (!run.grid.thresholds.empty()) {
    md << "## Thresholds\n\n| Detector | Calibrated on | Threshold | FPR (eval) | TPR (eval) |\n|---|---|---|---|---|\n";
    for (const auto& t : run.grid.thresholds) {
      md << "| " << t.detector_id << " | " << t.calibration_dataset_id << " | "
         << (std::isinf(t.value) ? std::string(t.value > 0 ? "inf" : "-inf") : fmt_fixed(t.value, 6)) << " | "
         << fmt_percent(t.achieved_fpr_on_eval) << " | " << fmt_percent(t.achieved_tpr_on_eval) << " |\n";
    }
    md << "\n";
  }
  if (!run.grid.human_only.empty()) {
    md << "## Human-only accuracy\n\n" << render_human_only_table(run.grid, opts.reference_human_dataset) << "\n";
  }
  return md.str();
}

// Writes {root}/{run_id}/ with cells.json, run.json, report.md and figures.
// run.json carries checksums of cells.json and of its own manifest body.
inline std::filesystem::path persist_run(const RunArtifacts& run, const std::filesystem::path& root,
                                         const PersistOptions& opts = {}) {
  if (run.manifest.run_id.empty()) throw ReportError("run_id is empty");
  const auto dir = root / run.manifest.run_id;
  if (std::filesystem::exists(dir / "run.json") && !opts.force) {
    throw ReportError("run '" + run.manifest.run_id + "' already exists at " + dir.string() + "; use --force to overwrite");
  }
  std::filesystem::create_directories(dir);

  const std::string cells = grid_to_json(run.grid).dump(2) + "\n";
  const auto body = run_manifest_to_json(run.manifest);
  const nlohmann::json doc = {{"schema_version", kRunSchemaVersion},
                              {"manifest", body},
                              {"checksums", {{"cells.json", sha256_hex(cells)}, {"manifest", sha256_hex(body.dump())}}}};
  fs::atomic_write(dir / "cells.json", cells);
  fs::atomic_write(dir / "report.md", render_report(run, opts));

  std::vector<std::string> dets, sets;
  for (const auto& c : run.grid.cells) {
    if (c.attack_id != kBaselineAttack) continue;
    dets.push_back(c.detector_id);
    sets.push_back(c.dataset_id);
  }
  dets = detail::ordered_unique(dets);
  sets = detail::ordered_unique(sets);
  // Figures only when the baseline sub-grid is complete.
  try {
    if (!dets.empty()) {
      fs::atomic_write(dir / "heatmap_tpr.svg", render_heatmap(run.grid, dets, sets, HeatmapMetric::tpr_at_fpr));
      fs::atomic_write(dir / "heatmap_auc.svg", render_heatmap(run.grid, dets, sets, HeatmapMetric::roc_auc));
      fs::atomic_write(dir / "bars_tpr.svg", render_bar_chart(run.grid, dets, sets));
    }
  } catch (const ReportError&) {
  }
  // run.json last: its presence marks a complete run.
  fs::atomic_write(dir / "run.json", doc.dump(2) + "\n");
  return dir;
}

inline RunArtifacts load_run(const std::filesystem::path& dir) {
  const auto doc = nlohmann::json::parse(fs::read_file(dir / "run.json"), nullptr, false);
  if (doc.is_discarded()) throw VersionError("run.json in " + dir.string() + " is not valid JSON");
  const int version = doc.value("schema_version", -1);
  if (version != kRunSchemaVersion) {
    throw VersionError("run schema version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kRunSchemaVersion) + "); re-run `mgtbench report` with this build to migrate");
  }
  const std::string cells = fs::read_file(dir / "cells.json");
  if (sha256_hex(cells) != doc.at("checksums").at("cells.json").get<std::string>()) {
    throw VersionError("cells.json checksum mismatch in " + dir.string() + " (file was modified)");
  }
  if (sha256_hex(doc.at("manifest").dump()) != doc.at("checksums").at("manifest").get<std::string>()) {
    throw VersionError("run.json manifest checksum mismatch in " + dir.string() + " (file was modified)");
  }
  return {run_manifest_from_json(doc.at("manifest")), grid_from_json(nlohmann::json::parse(cells))};
}

}  // namespace mgtbench
