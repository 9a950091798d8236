#pragma once

// Desk-scale text encoder used as the trainable detector backbone.
//
//   tokens   hashed word unigrams + bigrams, ids in [2, V)
//   x        mean of embedding rows                       (d)
//   z        tanh(W_enc x + b_enc)                         (h)
//   a        z + U relu(D z + b_down) + b_up   (adapter, optional)
//   class    softmax(W_cls a + b_cls)                      (2)
//   mlm      softmax(W_mlm a + b_mlm)                      (V)
//
// The MLM head is the pretraining head. It is not part of the classifier's
// parameter set and is only used to probe for forgetting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mgtbench/digest.hpp"
#include "mgtbench/errors.hpp"
#include "mgtbench/random.hpp"
#include "mgtbench/text.hpp"

namespace mgtbench {

struct EncoderArch {
  std::size_t vocab = 4096;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t adapter_dim = 8;
  std::size_t max_tokens = 512;

  friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

inline constexpr int kMaskId = 1;
inline constexpr std::string_view kMaskToken = "[MASK]";

class HashingTokenizer {
 public:
  explicit HashingTokenizer(std::size_t vocab) : vocab_(vocab) {
    if (vocab < 3) throw ConfigError("encoder vocab must be >= 3");
  }

  int word_id(std::string_view w) const {
    if (w == kMaskToken) return kMaskId;
    return 2 + static_cast<int>(fnv1a64(lower(w)) % (vocab_ - 2));
  }

  int bigram_id(std::string_view a, std::string_view b) const {
    return 2 + static_cast<int>(fnv1a64(lower(a) + '\x1f' + lower(b), 0x84222325cbf29ce4ULL) % (vocab_ - 2));
  }

  // Feature ids of a word sequence: every unigram, then every adjacent bigram.
  // A [MASK] word contributes no unigram and breaks the bigrams around it.
  std::vector<int> features(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(2 * words.size());
    for (const auto& w : words) {
      if (w != kMaskToken) ids.push_back(word_id(w));
    }
    for (std::size_t i = 1; i < words.size(); ++i) {
      if (words[i - 1] != kMaskToken && words[i] != kMaskToken) ids.push_back(bigram_id(words[i - 1], words[i]));
    }
    return ids;
  }

  std::size_t vocab() const { return vocab_; }

 private:
  static std::string lower(std::string_view w) {
    std::string s(w);
    for (char& c : s) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return s;
  }

  std::size_t vocab_;
};

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Parameter names are stable; they key checkpoints and trainable masks.
namespace param {
inline constexpr const char* kEmbeddings = "embeddings";
inline constexpr const char* kEncW = "encoder.weight";
inline constexpr const char* kEncB = "encoder.bias";
inline constexpr const char* kDownW = "adapter.down.weight";
inline constexpr const char* kDownB = "adapter.down.bias";
inline constexpr const char* kUpW = "adapter.up.weight";
inline constexpr const char* kUpB = "adapter.up.bias";
inline constexpr const char* kClsW = "classifier.weight";
inline constexpr const char* kClsB = "classifier.bias";
inline constexpr const char* kMlmW = "mlm.weight";
inline constexpr const char* kMlmB = "mlm.bias";

inline bool is_mlm(const std::string& n) { return n.rfind("mlm.", 0) == 0; }
inline bool is_adapter(const std::string& n) { return n.rfind("adapter.", 0) == 0; }
inline bool is_head(const std::string& n) { return n.rfind("classifier.", 0) == 0; }
}  // namespace param

using ParamMap = std::map<std::string, Tensor>;

class EncoderModel {
 public:
  EncoderModel() = default;

  // Random initialization; what a model "without pre-trained weights" is.
  EncoderModel(EncoderArch arch, std::uint64_t seed) : arch_(arch), tok_(arch.vocab) {
    Rng rng = Rng::derive(seed, "encoder-init");
    auto init = [&](const char* name, std::size_t r, std::size_t c, double sd) {
      Tensor t(r, c);
      for (double& x : t.data) x = rng.normal(0.0, sd);
      params_[name] = std::move(t);
    };
    init(param::kEmbeddings, arch.vocab, arch.embed_dim, 0.1);
    init(param::kEncW, arch.hidden_dim, arch.embed_dim, 1.0 / std::sqrt(static_cast<double>(arch.embed_dim)));
    params_[param::kEncB] = Tensor(arch.hidden_dim, 1);
    init(param::kMlmW, arch.vocab, arch.hidden_dim, 0.02);
    params_[param::kMlmB] = Tensor(arch.vocab, 1);
    reset_head(seed);
  }

  // Fresh classification head (2 classes) drawn from `seed`.
  void reset_head(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, "head-init");
    Tensor w(2, arch_.hidden_dim);
    for (double& x : w.data) x = rng.normal(0.0, 0.02);
    params_[param::kClsW] = std::move(w);
    params_[param::kClsB] = Tensor(2, 1);
  }

  // Inserts a bottleneck adapter initialized to the identity map.
  void add_adapter(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, "adapter-init");
    Tensor down(arch_.adapter_dim, arch_.hidden_dim);
    for (double& x : down.data) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(arch_.hidden_dim)));
    params_[param::kDownW] = std::move(down);
    params_[param::kDownB] = Tensor(arch_.adapter_dim, 1);
    params_[param::kUpW] = Tensor(arch_.hidden_dim, arch_.adapter_dim);
    params_[param::kUpB] = Tensor(arch_.hidden_dim, 1);
  }

  bool has_adapter() const { return params_.count(param::kDownW) > 0; }
  const EncoderArch& arch() const { return arch_; }
  const HashingTokenizer& tokenizer() const { return tok_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }

  // Truncates to the model context; `truncated` reports whether it had to.
  std::vector<int> encode(std::string_view s, bool* truncated = nullptr) const {
    auto words = text::split_words(s);
    const bool cut = words.size() > arch_.max_tokens;
    if (cut) words.resize(arch_.max_tokens);
    if (truncated) *truncated = cut;
    return tok_.features(words);
  }

  struct Activations {
    std::vector<int> ids;
    std::vector<double> x, pre, z, down_pre, down, a;
  };

  Activations represent(std::vector<int> ids) const {
    Activations act;
    act.ids = std::move(ids);
    const auto& E = params_.at(param::kEmbeddings);
    act.x.assign(arch_.embed_dim, 0.0);
    if (!act.ids.empty()) {
      for (int id : act.ids) {
        for (std::size_t k = 0; k < arch_.embed_dim; ++k) act.x[k] += E.at(static_cast<std::size_t>(id), k);
      }
      for (double& v : act.x) v /= static_cast<double>(act.ids.size());
    }
    act.pre = affine(params_.at(param::kEncW), params_.at(param::kEncB), act.x);
    act.z.resize(act.pre.size());
    for (std::size_t i = 0; i < act.pre.size(); ++i) act.z[i] = std::tanh(act.pre[i]);
    act.a = act.z;
    if (has_adapter()) {
      act.down_pre = affine(params_.at(param::kDownW), params_.at(param::kDownB), act.z);
      act.down.resize(act.down_pre.size());
      for (std::size_t i = 0; i < act.down.size(); ++i) act.down[i] = std::max(0.0, act.down_pre[i]);
      const auto up = affine(params_.at(param::kUpW), params_.at(param::kUpB), act.down);
      for (std::size_t i = 0; i < act.a.size(); ++i) act.a[i] += up[i];
    }
    return act;
  }

  std::vector<double> class_log_probs(const Activations& act) const {
    return log_softmax(affine(params_.at(param::kClsW), params_.at(param::kClsB), act.a));
  }

  std::vector<double> mlm_log_probs(const Activations& act) const {
    return log_softmax(affine(params_.at(param::kMlmW), params_.at(param::kMlmB), act.a));
  }

  // P(machine) for a text.
  double machine_probability(std::string_view s, bool* truncated = nullptr) const {
    return std::exp(class_log_probs(represent(encode(s, truncated)))[1]);
  }

  // Accumulates into `grads` the gradient of -log softmax(head(a))[target]
  // and returns that loss. `head` is either the classifier or the MLM head.
  double accumulate_gradient(const Activations& act, bool mlm_head, int target, ParamMap& grads,
                             double weight = 1.0) const {
    const char* hw = mlm_head ? param::kMlmW : param::kClsW;
    const char* hb = mlm_head ? param::kMlmB : param::kClsB;
    const auto& W = params_.at(hw);
    const auto lp = log_softmax(affine(W, params_.at(hb), act.a));
    const double loss = -lp[static_cast<std::size_t>(target)];

    std::vector<double> dlogits(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) dlogits[i] = weight * (std::exp(lp[i]) - (static_cast<int>(i) == target));
    std::vector<double> da(act.a.size(), 0.0);
    if (auto* g = find(grads, hw)) {
      for (std::size_t i = 0; i < W.rows; ++i) {
        for (std::size_t k = 0; k < W.cols; ++k) g->at(i, k) += dlogits[i] * act.a[k];
      }
    }
    if (auto* g = find(grads, hb)) {
      for (std::size_t i = 0; i < dlogits.size(); ++i) g->data[i] += dlogits[i];
    }
    for (std::size_t i = 0; i < W.rows; ++i) {
      for (std::size_t k = 0; k < W.cols; ++k) da[k] += W.at(i, k) * dlogits[i];
    }
    backprop_body(act, da, grads);
    return loss;
  }

 private:
  static Tensor* find(ParamMap& grads, const char* name) {
    auto it = grads.find(name);
    return it == grads.end() ? nullptr : &it->second;
  }

  static std::vector<double> affine(const Tensor& W, const Tensor& b, const std::vector<double>& v) {
    std::vector<double> out(W.rows);
    for (std::size_t i = 0; i < W.rows; ++i) {
      double s = b.data[i];
      const double* row = &W.data[i * W.cols];
      for (std::size_t k = 0; k < W.cols; ++k) s += row[k] * v[k];
      out[i] = s;
    }
    return out;
  }

  static std::vector<double> log_softmax(std::vector<double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    const double lse = mx + std::log(s);
    for (double& x : v) x -= lse;
    return v;
  }

  // Backpropagates d loss / d a through adapter, encoder and embeddings. Only
  // parameters present in `grads` receive gradients.
  void backprop_body(const Activations& act, const std::vector<double>& da, ParamMap& grads) const {
    std::vector<double> dz = da;
    if (has_adapter()) {
      const auto& U = params_.at(param::kUpW);
      const auto& D = params_.at(param::kDownW);
      std::vector<double> ddown(act.down.size(), 0.0);
      for (std::size_t i = 0; i < U.rows; ++i) {
        for (std::size_t k = 0; k < U.cols; ++k) ddown[k] += U.at(i, k) * da[i];
      }
      if (auto* g = find(grads, param::kUpW)) {
        for (std::size_t i = 0; i < U.rows; ++i) {
          for (std::size_t k = 0; k < U.cols; ++k) g->at(i, k) += da[i] * act.down[k];
        }
      }
      if (auto* g = find(grads, param::kUpB)) {
        for (std::size_t i = 0; i < da.size(); ++i) g->data[i] += da[i];
      }
      for (std::size_t k = 0; k < ddown.size(); ++k) ddown[k] *= act.down_pre[k] > 0.0 ? 1.0 : 0.0;
      if (auto* g = find(grads, param::kDownW)) {
        for (std::size_t i = 0; i < D.rows; ++i) {
          for (std::size_t k = 0; k < D.cols; ++k) g->at(i, k) += ddown[i] * act.z[k];
        }
      }
      if (auto* g = find(grads, param::kDownB)) {
        for (std::size_t i = 0; i < ddown.size(); ++i) g->data[i] += ddown[i];
      }
      for (std::size_t i = 0; i < D.rows; ++i) {
        for (std::size_t k = 0; k < D.cols; ++k) dz[k] += D.at(i, k) * ddown[i];
      }
    }

    auto* gW = find(grads, param::kEncW);
    auto* gb = find(grads, param::kEncB);
    auto* gE = find(grads, param::kEmbeddings);
    if (!gW && !gb && !gE) return;

    std::vector<double> dpre(dz.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dpre[i] = dz[i] * (1.0 - act.z[i] * act.z[i]);
    if (gW) {
      for (std::size_t i = 0; i < gW->rows; ++i) {
        for (std::size_t k = 0; k < gW->cols; ++k) gW->at(i, k) += dpre[i] * act.x[k];
      }
    }
    if (gb) {
      for (std::size_t i = 0; i < dpre.size(); ++i) gb->data[i] += dpre[i];
    }
    if (gE && !act.ids.empty()) {
      const auto& W = params_.at(param::kEncW);
      std::vector<double> dx(arch_.embed_dim, 0.0);
      for (std::size_t i = 0; i < W.rows; ++i) {
        for (std::size_t k = 0; k < W.cols; ++k) dx[k] += W.at(i, k) * dpre[i];
      }
      const double inv = 1.0 / static_cast<double>(act.ids.size());
      for (int id : act.ids) {
        for (std::size_t k = 0; k < arch_.embed_dim; ++k) gE->at(static_cast<std::size_t>(id), k) += dx[k] * inv;
      }
    }
  }

  EncoderArch arch_{};
  HashingTokenizer tok_{3};
  ParamMap params_;
};

}  // namespace mgtbench
