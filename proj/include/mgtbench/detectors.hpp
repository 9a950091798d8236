#pragma once

// Detector adapters. Every adapter maps a text to a finite real score with a
// fixed orientation: higher means more likely machine-generated.

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/digest.hpp"
#include "mgtbench/errors.hpp"
#include "mgtbench/fsutil.hpp"
#include "mgtbench/parallel.hpp"
#include "mgtbench/random.hpp"

namespace mgtbench {

enum class DetectorFamily { trained, zero_shot_curvature, remote_api, synthetic };

inline const char* to_string(DetectorFamily f) {
  switch (f) {
    case DetectorFamily::trained: return "trained";
    case DetectorFamily::zero_shot_curvature: return "zero_shot_curvature";
    case DetectorFamily::remote_api: return "remote_api";
    case DetectorFamily::synthetic: return "synthetic";
  }
  return "?";
}

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string id() const = 0;
  virtual DetectorFamily family() const = 0;
  // Changes whenever the scoring function changes; part of every cache key.
  virtual std::string version() const = 0;
  // Largest number of concurrent score() calls the adapter tolerates.
  virtual std::size_t max_concurrency() const { return 1; }
  virtual double score(const std::string& text) = 0;
};

// Content-addressed score cache keyed by (detector id, version, sha256(text)).
// With a directory it persists one small JSON file per entry.
class ScoreCache {
 public:
  ScoreCache() = default;
  explicit ScoreCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string key(const Detector& d, const std::string& text) {
    return d.id() + "\x1f" + d.version() + "\x1f" + sha256_hex(text);
  }

  std::optional<double> get(const std::string& key) {
    std::lock_guard lock(mu_);
    if (auto it = mem_.find(key); it != mem_.end()) return it->second;
    if (!dir_) return std::nullopt;
    const auto path = path_for(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    const double v = nlohmann::json::parse(fs::read_file(path)).at("score").get<double>();
    mem_[key] = v;
    return v;
  }

  void put(const std::string& key, double value) {
    std::lock_guard lock(mu_);
    mem_[key] = value;
    if (dir_) fs::atomic_write(path_for(key), nlohmann::json{{"score", value}}.dump());
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return mem_.size();
  }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    const std::string h = sha256_hex(key);
    return *dir_ / h.substr(0, 2) / (h + ".json");
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, double> mem_;
};

struct ScoreOptions {
  double max_failure_fraction = 0.02;
  ScoreCache* cache = nullptr;
  // Requested workers; the adapter's max_concurrency caps it (0 = no cap).
  std::size_t concurrency = 1;
};

// Scores `texts` in order. Items whose scoring failed come back empty; the
// call throws ScoreError when failures exceed the allowed fraction.
inline std::vector<std::optional<double>> score_batch(Detector& detector, const std::vector<std::string>& texts,
                                                      const ScoreOptions& opts = {}) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw InputError("text #" + std::to_string(i) + " is empty");
  }
  std::vector<std::optional<double>> out(texts.size());
  std::vector<std::string> errors(texts.size());
  std::size_t workers = std::max<std::size_t>(1, opts.concurrency);
  if (detector.max_concurrency() > 0) workers = std::min(workers, detector.max_concurrency());
  parallel_for(texts.size(), workers, [&](std::size_t i) {
    const std::string key = opts.cache ? ScoreCache::key(detector, texts[i]) : std::string();
    if (opts.cache) {
      if (auto hit = opts.cache->get(key)) {
        out[i] = *hit;
        return;
      }
    }
    try {
      const double s = detector.score(texts[i]);
      if (!std::isfinite(s)) throw ScoreError("non-finite score");
      out[i] = s;
      if (opts.cache) opts.cache->put(key, s);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::size_t failed = 0;
  std::string first;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (!out[i]) {
      if (!failed) first = errors[i];
      ++failed;
    }
  }
  if (static_cast<double>(failed) > opts.max_failure_fraction * static_cast<double>(texts.size())) {
    throw ScoreError(detector.id() + ": " + std::to_string(failed) + " of " + std::to_string(texts.size()) +
                     " texts failed to score (first: " + first + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simple adapters

class ConstantDetector : public Detector {
 public:
  explicit ConstantDetector(double value, std::string id = "constant") : value_(value), id_(std::move(id)) {}
  std::string id() const override { return id_; }
  DetectorFamily family() const override { return DetectorFamily::synthetic; }
  std::string version() const override { return "1"; }
  std::size_t max_concurrency() const override { return 0; }
  double score(const std::string&) override { return value_; }

 private:
  double value_;
  std::string id_;
};

// Draws each score from N(machine_mean, sd) or N(human_mean, sd) according
// to the text's true label, looked up by content hash. The draw is seeded by
// the text hash, so a text always gets the same score.
class SyntheticDetector : public Detector {
 public:
  struct Params {
    double machine_mean = 0.8;
    double human_mean = 0.2;
    double sd = 0.1;
    std::uint64_t seed = 0;
  };

  SyntheticDetector(std::string id, Params p) : id_(std::move(id)), p_(p) {}

  void register_dataset(const PairedDataset& ds) {
    for (const auto& s : ds.samples) register_text(s.text, s.label);
  }
  void register_text(const std::string& text, Label label) { labels_[sha256_hex(text)] = label; }

  std::string id() const override { return id_; }
  DetectorFamily family() const override { return DetectorFamily::synthetic; }
  std::string version() const override {
    return "synthetic:" + std::to_string(p_.machine_mean) + "/" + std::to_string(p_.human_mean) + "/" +
           std::to_string(p_.sd) + "/" + std::to_string(p_.seed);
  }
  std::size_t max_concurrency() const override { return 0; }

  double score(const std::string& text) override {
    const std::string h = sha256_hex(text);
    auto it = labels_.find(h);
    if (it == labels_.end()) throw ScoreError("synthetic detector has no label for text " + h.substr(0, 12));
    Rng rng(fnv1a64(h, p_.seed));
    return rng.normal(it->second == Label::machine ? p_.machine_mean : p_.human_mean, p_.sd);
  }

 private:
  std::string id_;
  Params p_;
  std::unordered_map<std::string, Label> labels_;
};

}  // namespace mgtbench
