#pragma once

// Zero-shot conditional-probability-curvature detector.
//
// For observed tokens x_1..x_T, with scoring model p and reference model q
// both conditioned on the observed prefix x_<t:
//
//   L     = sum_t log p(x_t)
//   mu    = sum_t E_{x~q}[log p(x)]
//   sigma = sqrt(sum_t Var_{x~q}[log p(x)])
//   score = (L - mu) / sigma
//
// The analytic form evaluates the expectations exactly from the full
// conditional distributions; the Monte-Carlo form replaces them with the
// mean and standard deviation of L over sequences of sampled alternatives.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mgtbench/detectors.hpp"
#include "mgtbench/digest.hpp"
#include "mgtbench/language_model.hpp"
#include "mgtbench/random.hpp"

namespace mgtbench {

enum class CurvatureEstimator { analytic, monte_carlo };

struct CurvatureConfig {
  std::string scoring_model;
  std::string reference_model;
  std::size_t n_samples = 10000;
  CurvatureEstimator estimator = CurvatureEstimator::analytic;
  std::uint64_t seed = 0;
};

struct CurvatureMoments {
  double log_likelihood = 0.0;
  double expected = 0.0;
  double variance = 0.0;

  double score() const { return variance <= 1e-12 ? 0.0 : (log_likelihood - expected) / std::sqrt(variance); }
};

// Per-position conditional tables along the observed sequence.
struct PositionTables {
  std::vector<std::vector<double>> score_logp;  // log p(. | x_<t)
  std::vector<std::vector<double>> ref_prob;    // q(. | x_<t)
};

inline PositionTables position_tables(const TokenModel& scoring, const TokenModel& reference,
                                      std::span<const int> tokens) {
  PositionTables t;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto ctx = tokens.subspan(0, i);
    t.score_logp.push_back(scoring.next_log_probs(ctx));
    auto q = reference.next_log_probs(ctx);
    for (double& x : q) x = std::exp(x);
    t.ref_prob.push_back(std::move(q));
  }
  return t;
}

inline CurvatureMoments analytic_moments(const PositionTables& t, std::span<const int> tokens) {
  CurvatureMoments m;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& lp = t.score_logp[i];
    const auto& q = t.ref_prob[i];
    double mean = 0.0, sq = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (q[v] == 0.0) continue;
      mean += q[v] * lp[v];
      sq += q[v] * lp[v] * lp[v];
    }
    m.log_likelihood += lp[static_cast<std::size_t>(tokens[i])];
    m.expected += mean;
    m.variance += std::max(0.0, sq - mean * mean);
  }
  return m;
}

// Log-likelihood totals of `n` alternative sequences sampled position-wise
// from the reference conditionals.
inline std::vector<double> sample_alternative_totals(const PositionTables& t, std::size_t n, Rng& rng) {
  std::vector<double> totals(n, 0.0);
  for (std::size_t i = 0; i < t.ref_prob.size(); ++i) {
    const auto& q = t.ref_prob[i];
    const auto& lp = t.score_logp[i];
    for (std::size_t j = 0; j < n; ++j) totals[j] += lp[rng.categorical(q)];
  }
  return totals;
}

inline CurvatureMoments monte_carlo_moments(const PositionTables& t, std::span<const int> tokens, std::size_t n,
                                            Rng& rng) {
  CurvatureMoments m;
  for (std::size_t i = 0; i < tokens.size(); ++i) m.log_likelihood += t.score_logp[i][static_cast<std::size_t>(tokens[i])];
  const auto totals = sample_alternative_totals(t, n, rng);
  double mean = 0.0;
  for (double x : totals) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : totals) var += (x - mean) * (x - mean);
  m.expected = mean;
  m.variance = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
  return m;
}

class CurvatureDetector : public Detector {
 public:
  CurvatureDetector(std::string id, std::shared_ptr<const TokenModel> scoring,
                    std::shared_ptr<const TokenModel> reference, CurvatureConfig cfg)
      : id_(std::move(id)), scoring_(std::move(scoring)), reference_(std::move(reference)), cfg_(std::move(cfg)) {
    if (cfg_.n_samples < 1) throw ConfigError("curvature n_samples must be >= 1");
    if (scoring_->tokenizer().id() != reference_->tokenizer().id()) {
      throw ConfigError("curvature detector '" + id_ + "': scoring tokenizer " + scoring_->tokenizer().id() +
                        " differs from reference tokenizer " + reference_->tokenizer().id());
    }
  }

  std::string id() const override { return id_; }
  DetectorFamily family() const override { return DetectorFamily::zero_shot_curvature; }
  std::string version() const override {
    return cfg_.scoring_model + "|" + cfg_.reference_model + "|" +
           (cfg_.estimator == CurvatureEstimator::analytic ? "analytic" : "mc" + std::to_string(cfg_.n_samples)) +
           "|" + scoring_->tokenizer().id();
  }
  std::size_t max_concurrency() const override { return 0; }

  CurvatureMoments moments(const std::string& text) const {
    const auto tokens = scoring_->tokenizer().encode(text);
    if (tokens.empty()) throw InputError("curvature detector needs at least one token");
    const auto tables = position_tables(*scoring_, *reference_, tokens);
    if (cfg_.estimator == CurvatureEstimator::analytic) return analytic_moments(tables, tokens);
    Rng rng(fnv1a64(text, cfg_.seed));
    return monte_carlo_moments(tables, tokens, cfg_.n_samples, rng);
  }

  double score(const std::string& text) override { return moments(text).score(); }

 private:
  std::string id_;
  std::shared_ptr<const TokenModel> scoring_;
  std::shared_ptr<const TokenModel> reference_;
  CurvatureConfig cfg_;
};

}  // namespace mgtbench
