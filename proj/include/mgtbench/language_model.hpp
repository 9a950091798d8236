#pragma once

// Small autoregressive token models. They back the local generator backend
// and the curvature detector at desk scale, and provide closed-form mocks
// whose conditional distributions are known exactly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgtbench/digest.hpp"
#include "mgtbench/errors.hpp"
#include "mgtbench/random.hpp"
#include "mgtbench/text.hpp"

namespace mgtbench {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  // Identity of the token inventory; two models can share scoring work only
  // when their tokenizer ids match.
  virtual std::string id() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<int> encode(std::string_view s) const = 0;
  virtual std::string decode(std::span<const int> tokens) const = 0;
};

class TokenModel {
 public:
  virtual ~TokenModel() = default;
  virtual const Tokenizer& tokenizer() const = 0;
  std::size_t vocab_size() const { return tokenizer().vocab_size(); }
  // Normalized log-probabilities of the next token given `context`.
  virtual std::vector<double> next_log_probs(std::span<const int> context) const = 0;
};

inline std::vector<double> softmax_log(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Draws one token after applying the repetition penalty (to tokens already in
// `history`), temperature, then nucleus truncation to the smallest set with
// mass >= top_p. The penalty follows the usual logit rule: positive logits
// are divided by it, negative ones multiplied.
inline int sample_next(std::span<const double> log_probs, double temperature, double repetition_penalty,
                       std::span<const int> history, Rng& rng, double top_p = 1.0) {
  std::vector<double> logits(log_probs.begin(), log_probs.end());
  if (repetition_penalty != 1.0) {
    std::set<int> seen(history.begin(), history.end());
    for (int t : seen) {
      if (t < 0 || static_cast<std::size_t>(t) >= logits.size()) continue;
      double& l = logits[static_cast<std::size_t>(t)];
      l = l > 0 ? l / repetition_penalty : l * repetition_penalty;
    }
  }
  for (double& l : logits) l /= temperature;
  const auto lp = softmax_log(logits);
  std::vector<double> probs(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
  if (top_p < 1.0) {
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    double mass = 0.0;
    std::size_t keep = 0;
    while (keep < order.size() && (keep == 0 || mass < top_p)) mass += probs[order[keep++]];
    for (std::size_t i = keep; i < order.size(); ++i) probs[order[i]] = 0.0;
  }
  return static_cast<int>(rng.categorical(probs));
}

// ---------------------------------------------------------------------------
// Word-level tokenizer over a closed vocabulary. Id 0 is <unk>.

class WordTokenizer : public Tokenizer {
 public:
  WordTokenizer() : words_{"<unk>"} { index_.emplace("<unk>", 0); }

  static WordTokenizer from_texts(const std::vector<std::string>& texts, std::size_t min_count = 1) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : texts) {
      for (auto& w : text::split_words(t)) ++counts[w];
    }
    std::vector<std::string> vocab;
    for (auto& [w, c] : counts) {
      if (c >= min_count) vocab.push_back(w);
    }
    std::sort(vocab.begin(), vocab.end());
    WordTokenizer tok;
    for (auto& w : vocab) tok.add(w);
    return tok;
  }

  int add(const std::string& w) {
    auto [it, inserted] = index_.emplace(w, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(w);
    return it->second;
  }

  std::string id() const override {
    std::string all;
    for (const auto& w : words_) {
      all += w;
      all += '\n';
    }
    return "word:" + sha256_hex(all).substr(0, 16);
  }
  std::size_t vocab_size() const override { return words_.size(); }

  std::vector<int> encode(std::string_view s) const override {
    std::vector<int> out;
    for (const auto& w : text::split_words(s)) {
      auto it = index_.find(w);
      out.push_back(it == index_.end() ? 0 : it->second);
    }
    return out;
  }

  std::string decode(std::span<const int> tokens) const override {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += words_.at(static_cast<std::size_t>(tokens[i]));
    }
    return out;
  }

  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Interpolated bigram model: p(w | v) = lambda * c(v,w)/c(v) + (1 - lambda) * p_uni(w),
// with an add-one unigram. The first token is conditioned on nothing (unigram).
class BigramModel : public TokenModel {
 public:
  BigramModel(WordTokenizer tokenizer, const std::vector<std::string>& texts, double lambda = 0.9)
      : tok_(std::move(tokenizer)), lambda_(lambda) {
    const std::size_t v = tok_.vocab_size();
    std::vector<double> uni(v, 1.0);
    double total = static_cast<double>(v);
    for (const auto& t : texts) {
      const auto ids = tok_.encode(t);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        uni[static_cast<std::size_t>(ids[i])] += 1.0;
        total += 1.0;
        if (i > 0) {
          ++bigrams_[ids[i - 1]][ids[i]];
          ++context_totals_[ids[i - 1]];
        }
      }
    }
    unigram_.resize(v);
    for (std::size_t i = 0; i < v; ++i) unigram_[i] = uni[i] / total;
  }

  const Tokenizer& tokenizer() const override { return tok_; }

  std::vector<double> next_log_probs(std::span<const int> context) const override {
    std::vector<double> p = unigram_;
    if (!context.empty()) {
      const int prev = context.back();
      auto it = bigrams_.find(prev);
      if (it != bigrams_.end()) {
        const double denom = static_cast<double>(context_totals_.at(prev));
        for (double& x : p) x *= (1.0 - lambda_);
        for (const auto& [w, c] : it->second) p[static_cast<std::size_t>(w)] += lambda_ * static_cast<double>(c) / denom;
      }
    }
    for (double& x : p) x = std::log(x);
    return p;
  }

 private:
  WordTokenizer tok_;
  double lambda_;
  std::vector<double> unigram_;
  std::unordered_map<int, std::unordered_map<int, std::size_t>> bigrams_;
  std::unordered_map<int, std::size_t> context_totals_;
};

// ---------------------------------------------------------------------------
// Closed-form mocks

// Tokens are single symbols from a fixed alphabet separated by spaces.
class SymbolTokenizer : public Tokenizer {
 public:
  explicit SymbolTokenizer(std::vector<std::string> symbols, std::string name = "symbols")
      : symbols_(std::move(symbols)), name_(std::move(name)) {}

  std::string id() const override { return name_ + ":" + std::to_string(symbols_.size()); }
  std::size_t vocab_size() const override { return symbols_.size(); }

  std::vector<int> encode(std::string_view s) const override {
    std::vector<int> out;
    for (const auto& w : text::split_words(s)) {
      auto it = std::find(symbols_.begin(), symbols_.end(), w);
      if (it == symbols_.end()) throw InputError("symbol '" + w + "' not in mock vocabulary");
      out.push_back(static_cast<int>(it - symbols_.begin()));
    }
    return out;
  }

  std::string decode(std::span<const int> tokens) const override {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += symbols_.at(static_cast<std::size_t>(tokens[i]));
    }
    return out;
  }

 private:
  std::vector<std::string> symbols_;
  std::string name_;
};

// Markov chain where the next token is (prev + k) mod V with probability
// weights[k]; the first token uses prev = 0. Every context has the same
// distribution up to relabelling, so per-position entropy moments do not
// depend on the context.
class CyclicMarkovModel : public TokenModel {
 public:
  explicit CyclicMarkovModel(std::vector<double> weights, std::string name = "cyclic")
      : weights_(std::move(weights)), tok_(make_symbols(weights_.size()), std::move(name)) {
    double s = 0.0;
    for (double w : weights_) {
      if (w <= 0.0) throw ConfigError("cyclic mock weights must be positive");
      s += w;
    }
    for (double& w : weights_) w /= s;
  }

  const Tokenizer& tokenizer() const override { return tok_; }

  std::vector<double> next_log_probs(std::span<const int> context) const override {
    const std::size_t v = weights_.size();
    const std::size_t prev = context.empty() ? 0 : static_cast<std::size_t>(context.back());
    std::vector<double> lp(v);
    for (std::size_t k = 0; k < v; ++k) lp[(prev + k) % v] = std::log(weights_[k]);
    return lp;
  }

  const std::vector<double>& weights() const { return weights_; }

 private:
  static std::vector<std::string> make_symbols(std::size_t n) {
    std::vector<std::string> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(std::string(1, static_cast<char>('a' + i)));
    return s;
  }

  std::vector<double> weights_;
  SymbolTokenizer tok_;
};

// Uniform over the vocabulary regardless of context.
class UniformModel : public TokenModel {
 public:
  explicit UniformModel(std::size_t v) : tok_(symbols(v), "uniform") {}
  const Tokenizer& tokenizer() const override { return tok_; }
  std::vector<double> next_log_probs(std::span<const int>) const override {
    return std::vector<double>(tok_.vocab_size(), -std::log(static_cast<double>(tok_.vocab_size())));
  }

 private:
  static std::vector<std::string> symbols(std::size_t n) {
    std::vector<std::string> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back("t" + std::to_string(i));
    return s;
  }
  SymbolTokenizer tok_;
};

// Extends `context` by `length` tokens sampled from `model`. The repetition
// penalty sees the whole context, prompt included.
inline std::vector<int> sample_sequence(const TokenModel& model, std::size_t length, Rng& rng,
                                        double temperature = 1.0, double repetition_penalty = 1.0,
                                        std::vector<int> context = {}) {
  for (std::size_t i = 0; i < length; ++i) {
    const auto lp = model.next_log_probs(context);
    context.push_back(sample_next(lp, temperature, repetition_penalty, context, rng));
  }
  return context;
}

inline std::vector<int> greedy_sequence(const TokenModel& model, std::size_t length) {
  std::vector<int> ctx;
  for (std::size_t i = 0; i < length; ++i) {
    const auto lp = model.next_log_probs(ctx);
    ctx.push_back(static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin()));
  }
  return ctx;
}

}  // namespace mgtbench
