#pragma once

// Detector fine-tuning: one epoch over the train split, evaluation every
// `eval_interval_samples` samples, and only the weights with the lowest eval
// loss are kept. Optionally tracks masked-token loss on fact probes to watch
// for forgetting of the pretraining task.

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/detectors.hpp"
#include "mgtbench/encoder.hpp"
#include "mgtbench/fsutil.hpp"

namespace mgtbench {

enum class BaseModelRole { distil_encoder, large_encoder_a, large_encoder_b };
enum class TrainMethod { full, head_only, adapter };

inline const char* to_string(BaseModelRole r) {
  switch (r) {
    case BaseModelRole::distil_encoder: return "distil-encoder";
    case BaseModelRole::large_encoder_a: return "large-encoder-A";
    case BaseModelRole::large_encoder_b: return "large-encoder-B";
  }
  return "?";
}

inline const char* to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::full: return "full";
    case TrainMethod::head_only: return "head_only";
    case TrainMethod::adapter: return "adapter";
  }
  return "?";
}

inline BaseModelRole parse_base_model(std::string_view s) {
  for (auto r : {BaseModelRole::distil_encoder, BaseModelRole::large_encoder_a, BaseModelRole::large_encoder_b}) {
    if (s == to_string(r)) return r;
  }
  throw ConfigError("unknown base model '" + std::string(s) + "'");
}

inline TrainMethod parse_method(std::string_view s) {
  for (auto m : {TrainMethod::full, TrainMethod::head_only, TrainMethod::adapter}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown training method '" + std::string(s) + "'");
}

// Desk-scale stand-ins for the three encoder roles (small distilled model,
// two large models).
inline EncoderArch arch_for(BaseModelRole r) {
  switch (r) {
    case BaseModelRole::distil_encoder: return {4096, 32, 32, 8, 512};
    case BaseModelRole::large_encoder_a: return {8192, 48, 64, 16, 512};
    case BaseModelRole::large_encoder_b: return {8192, 64, 64, 16, 512};
  }
  return {};
}

struct Hyperparams {
  double learning_rate;
  std::size_t batch_size;
};

// Per (model, method) defaults.
inline Hyperparams default_hyperparams(BaseModelRole r, TrainMethod m) {
  if (m == TrainMethod::head_only) return {1e-3, 64};
  switch (r) {
    case BaseModelRole::distil_encoder: return m == TrainMethod::adapter ? Hyperparams{3e-4, 16} : Hyperparams{3e-5, 16};
    case BaseModelRole::large_encoder_a: return m == TrainMethod::adapter ? Hyperparams{1e-4, 16} : Hyperparams{1e-5, 16};
    case BaseModelRole::large_encoder_b: return m == TrainMethod::adapter ? Hyperparams{1e-4, 8} : Hyperparams{1e-5, 16};
  }
  return {1e-5, 16};
}

struct TrainConfig {
  BaseModelRole base_model = BaseModelRole::distil_encoder;
  TrainMethod method = TrainMethod::full;
  // Unset values resolve from default_hyperparams().
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  int epochs = 1;
  std::size_t eval_interval_samples = 200;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  double lr() const { return learning_rate.value_or(default_hyperparams(base_model, method).learning_rate); }
  std::size_t batch() const { return batch_size.value_or(default_hyperparams(base_model, method).batch_size); }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (eval_interval_samples == 0) throw ConfigError("eval_interval_samples must be > 0");
    if (batch() == 0) throw ConfigError("batch_size must be > 0");
    if (!(lr() > 0.0)) throw ConfigError("learning_rate must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Trainable parameters

struct TrainableMask {
  std::map<std::string, bool> trainable;
  std::size_t trainable_count = 0;
  std::size_t total_count = 0;
  std::size_t base_trainable_count = 0;  // embeddings + encoder layer
};

// Adds the blocks `method` needs (adapters) to a base model.
inline void prepare_for_method(EncoderModel& model, TrainMethod method, std::uint64_t seed) {
  if (method == TrainMethod::adapter && !model.has_adapter()) model.add_adapter(seed);
}

// Which classifier parameters a method updates. The MLM head is never part
// of the classifier and is excluded from the counts.
inline TrainableMask select_method(TrainMethod method, const EncoderModel& model) {
  if (method == TrainMethod::adapter && !model.has_adapter()) {
    throw ConfigError("adapter training needs a model with adapter blocks; call prepare_for_method first");
  }
  TrainableMask mask;
  for (const auto& [name, t] : model.params()) {
    if (param::is_mlm(name)) continue;
    bool on = false;
    switch (method) {
      case TrainMethod::full: on = true; break;
      case TrainMethod::head_only: on = param::is_head(name); break;
      case TrainMethod::adapter: on = param::is_head(name) || param::is_adapter(name); break;
    }
    mask.trainable[name] = on;
    mask.total_count += t.size();
    if (on) {
      mask.trainable_count += t.size();
      if (!param::is_head(name) && !param::is_adapter(name)) mask.base_trainable_count += t.size();
    }
  }
  return mask;
}

inline TrainableMask select_method(std::string_view method, const EncoderModel& model) {
  return select_method(parse_method(method), model);
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam with decoupled weight decay. Biases are not decayed.
class AdamW {
 public:
  explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamMap& params, const ParamMap& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != g.size()) {
        m = Tensor(g.rows, g.cols);
        v = Tensor(g.rows, g.cols);
      }
      const bool decay = name.size() < 5 || name.compare(name.size() - 5, 5, ".bias") != 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        m.data[i] = b1_ * m.data[i] + (1.0 - b1_) * g.data[i];
        v.data[i] = b2_ * v.data[i] + (1.0 - b2_) * g.data[i] * g.data[i];
        const double update = (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + eps_);
        p.data[i] -= lr * (update + (decay ? wd_ * p.data[i] : 0.0));
      }
    }
  }

 private:
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

// Linear warmup to the peak over the first `warmup` steps, then linear decay
// to zero at `total`. `step` counts optimizer steps already taken.
inline double linear_schedule(double peak, std::size_t step, std::size_t total, double warmup_fraction) {
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total)));
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (total <= warm) return peak;
  return peak * std::max(0.0, static_cast<double>(total - step) / static_cast<double>(total - warm));
}

// ---------------------------------------------------------------------------
// Degradation probes

struct Probe {
  std::string text_with_gap;
  std::string answer;
};

inline std::vector<Probe> load_probes(const std::filesystem::path& path) {
  std::istringstream lines(fs::read_file(path));
  std::vector<Probe> out;
  std::string line;
  while (std::getline(lines, line)) {
    if (text::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("text_with_gap").get<std::string>(), j.at("answer").get<std::string>()});
  }
  return out;
}

// Mean masked-token cross-entropy of the model's MLM head over `probes`.
// Each probe must contain exactly one [MASK] word.
inline double track_degradation(const EncoderModel& model, const std::vector<Probe>& probes) {
  if (probes.empty()) throw ProbeError("no probes supplied");
  double total = 0.0;
  for (const auto& p : probes) {
    const auto words = text::split_words(p.text_with_gap);
    const auto masks = std::count(words.begin(), words.end(), std::string(kMaskToken));
    if (masks != 1) {
      throw ProbeError("probe '" + p.text_with_gap + "' has " + std::to_string(masks) + " [MASK] words, need 1");
    }
    const auto act = model.represent(model.tokenizer().features(words));
    const auto lp = model.mlm_log_probs(act);
    total -= lp[static_cast<std::size_t>(model.tokenizer().word_id(text::trim(p.answer)))];
  }
  return total / static_cast<double>(probes.size());
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t examples = 4000;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  std::uint64_t seed = 0;
};

// Masked-word pretraining of embeddings, encoder and MLM head on raw text.
// Produces the "pretrained" base that detectors are fine-tuned from.
inline EncoderModel pretrain_mlm(const EncoderArch& arch, const std::vector<std::string>& texts,
                                 const PretrainConfig& cfg) {
  EncoderModel model(arch, cfg.seed);
  std::vector<std::vector<std::string>> docs;
  for (const auto& t : texts) {
    auto w = text::split_words(t);
    if (w.size() >= 2) {
      if (w.size() > arch.max_tokens) w.resize(arch.max_tokens);
      docs.push_back(std::move(w));
    }
  }
  if (docs.empty()) throw InputError("pretraining needs texts with at least two words");

  Rng rng = Rng::derive(cfg.seed, "pretrain");
  AdamW opt(0.01);
  const std::size_t steps = (cfg.examples + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t step = 0; step < steps; ++step) {
    ParamMap grads;
    for (const char* n : {param::kEmbeddings, param::kEncW, param::kEncB, param::kMlmW, param::kMlmB}) {
      const auto& p = model.params().at(n);
      grads[n] = Tensor(p.rows, p.cols);
    }
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      auto words = docs[rng.below(docs.size())];
      const std::size_t pos = rng.below(words.size());
      const int target = model.tokenizer().word_id(words[pos]);
      words[pos] = std::string(kMaskToken);
      const auto act = model.represent(model.tokenizer().features(words));
      model.accumulate_gradient(act, true, target, grads, 1.0 / static_cast<double>(cfg.batch_size));
    }
    opt.step(model.params(), grads, linear_schedule(cfg.learning_rate, step, steps, 0.1));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct TrainLogEntry {
  std::size_t samples_seen = 0;
  double eval_loss = 0.0;
  std::optional<double> degradation_loss;

  friend bool operator==(const TrainLogEntry&, const TrainLogEntry&) = default;
};

struct TrainedDetector {
  std::string detector_id;
  std::string train_dataset_id;
  TrainConfig config;
  EncoderModel model;
  double best_eval_loss = 0.0;
  std::vector<TrainLogEntry> training_log;
};

struct EncodedSample {
  std::vector<int> ids;
  int label = 0;  // 1 = machine
};

inline std::vector<EncodedSample> encode_split(const EncoderModel& model, const PairedDataset& ds, Split split) {
  std::vector<EncodedSample> out;
  for (const auto* s : ds.samples_in(split)) out.push_back({model.encode(s->text), s->label == Label::machine ? 1 : 0});
  return out;
}

inline double classification_loss(const EncoderModel& model, const std::vector<EncodedSample>& data) {
  if (data.empty()) throw InputError("cannot evaluate on an empty split");
  double total = 0.0;
  for (const auto& s : data) total -= model.class_log_probs(model.represent(s.ids))[static_cast<std::size_t>(s.label)];
  return total / static_cast<double>(data.size());
}

inline double eval_loss(const EncoderModel& model, const PairedDataset& ds, Split split = Split::eval) {
  return classification_loss(model, encode_split(model, ds, split));
}

inline TrainedDetector finetune(const EncoderModel& base, const PairedDataset& ds, const TrainConfig& cfg,
                                const std::string& detector_id, const std::vector<Probe>* probes = nullptr) {
  cfg.validate();
  if (ds.calibration_locked) throw ConfigError("dataset '" + ds.dataset_id + "' is an attack set and cannot train");
  EncoderModel model = base;
  model.reset_head(cfg.seed);
  prepare_for_method(model, cfg.method, cfg.seed);
  const auto mask = select_method(cfg.method, model);

  auto train = encode_split(model, ds, Split::train);
  const auto eval = encode_split(model, ds, Split::eval);
  if (train.empty() || eval.empty()) throw InputError("dataset '" + ds.dataset_id + "' needs non-empty train and eval splits");

  TrainedDetector out;
  out.detector_id = detector_id;
  out.train_dataset_id = ds.dataset_id;
  out.config = cfg;
  out.config.learning_rate = cfg.lr();
  out.config.batch_size = cfg.batch();

  const std::size_t bs = cfg.batch();
  const std::size_t steps_per_epoch = (train.size() + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  AdamW opt(cfg.weight_decay);
  Rng rng = Rng::derive(cfg.seed, "train-order");

  std::optional<EncoderModel> best;
  double best_loss = std::numeric_limits<double>::infinity();
  auto evaluate = [&](std::size_t seen) {
    TrainLogEntry e{seen, classification_loss(model, eval), std::nullopt};
    if (probes && !probes->empty()) e.degradation_loss = track_degradation(model, *probes);
    out.training_log.push_back(e);
    if (!std::isfinite(e.eval_loss)) {
      throw TrainError("eval loss diverged at " + std::to_string(seen) + " samples (log has " +
                       std::to_string(out.training_log.size()) + " entries)");
    }
    if (e.eval_loss < best_loss) {
      best_loss = e.eval_loss;
      best = model;
    }
  };

  std::size_t seen = 0;
  std::size_t next_eval = cfg.eval_interval_samples;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train);
    for (std::size_t start = 0; start < train.size(); start += bs, ++step) {
      const std::size_t end = std::min(train.size(), start + bs);
      ParamMap grads;
      for (const auto& [name, on] : mask.trainable) {
        if (!on) continue;
        const auto& p = model.params().at(name);
        grads[name] = Tensor(p.rows, p.cols);
      }
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto act = model.represent(train[i].ids);
        batch_loss += model.accumulate_gradient(act, false, train[i].label, grads,
                                                1.0 / static_cast<double>(end - start));
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainError("training loss is not finite at step " + std::to_string(step) + " (log has " +
                         std::to_string(out.training_log.size()) + " entries)");
      }
      opt.step(model.params(), grads, linear_schedule(cfg.lr(), step, total_steps, cfg.warmup_fraction));
      seen += end - start;
      if (seen >= next_eval) {
        evaluate(seen);
        while (next_eval <= seen) next_eval += cfg.eval_interval_samples;
      }
    }
  }
  // A train split shorter than one interval still gets one evaluation.
  if (out.training_log.empty()) evaluate(seen);

  out.model = std::move(*best);
  out.best_eval_loss = best_loss;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: {dir}/weights.bin, config.json, training_log.jsonl

namespace detail {

inline constexpr char kWeightsMagic[8] = {'M', 'G', 'T', 'W', 'v', '1', '\n', '\0'};

template <typename T>
void put_raw(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw VersionError("weights file is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_params(const ParamMap& params) {
  std::string out(detail::kWeightsMagic, sizeof(detail::kWeightsMagic));
  detail::put_raw<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params) {
    detail::put_raw<std::uint64_t>(out, name.size());
    out += name;
    detail::put_raw<std::uint64_t>(out, t.rows);
    detail::put_raw<std::uint64_t>(out, t.cols);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  return out;
}

inline ParamMap deserialize_params(const std::string& in) {
  if (in.size() < sizeof(detail::kWeightsMagic) ||
      std::memcmp(in.data(), detail::kWeightsMagic, sizeof(detail::kWeightsMagic)) != 0) {
    throw VersionError("weights file has an unknown format");
  }
  std::size_t pos = sizeof(detail::kWeightsMagic);
  ParamMap params;
  const auto n = detail::get_raw<std::uint64_t>(in, pos);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = detail::get_raw<std::uint64_t>(in, pos);
    if (pos + len > in.size()) throw VersionError("weights file is truncated");
    std::string name = in.substr(pos, len);
    pos += len;
    const auto rows = detail::get_raw<std::uint64_t>(in, pos);
    const auto cols = detail::get_raw<std::uint64_t>(in, pos);
    Tensor t(rows, cols);
    const std::size_t bytes = t.data.size() * sizeof(double);
    if (pos + bytes > in.size()) throw VersionError("weights file is truncated");
    std::memcpy(t.data.data(), in.data() + pos, bytes);
    pos += bytes;
    params.emplace(std::move(name), std::move(t));
  }
  return params;
}

inline nlohmann::json arch_to_json(const EncoderArch& a) {
  return {{"vocab", a.vocab}, {"embed_dim", a.embed_dim}, {"hidden_dim", a.hidden_dim},
          {"adapter_dim", a.adapter_dim}, {"max_tokens", a.max_tokens}};
}

inline EncoderArch arch_from_json(const nlohmann::json& j) {
  return {j.at("vocab"), j.at("embed_dim"), j.at("hidden_dim"), j.at("adapter_dim"), j.at("max_tokens")};
}

inline void save_model(const EncoderModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  fs::atomic_write(dir / "weights.bin", serialize_params(model.params()));
  fs::atomic_write(dir / "arch.json", arch_to_json(model.arch()).dump(2) + "\n");
}

inline EncoderModel load_model(const std::filesystem::path& dir) {
  EncoderModel model(arch_from_json(nlohmann::json::parse(fs::read_file(dir / "arch.json"))), 0);
  model.params() = deserialize_params(fs::read_file(dir / "weights.bin"));
  return model;
}

inline void save_checkpoint(const TrainedDetector& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  fs::atomic_write(dir / "weights.bin", serialize_params(d.model.params()));
  const nlohmann::json cfg = {
      {"detector_id", d.detector_id},
      {"train_dataset_id", d.train_dataset_id},
      {"base_model", to_string(d.config.base_model)},
      {"method", to_string(d.config.method)},
      {"learning_rate", d.config.lr()},
      {"batch_size", d.config.batch()},
      {"epochs", d.config.epochs},
      {"eval_interval_samples", d.config.eval_interval_samples},
      {"warmup_fraction", d.config.warmup_fraction},
      {"weight_decay", d.config.weight_decay},
      {"seed", d.config.seed},
      {"arch", arch_to_json(d.model.arch())},
      {"best_eval_loss", d.best_eval_loss},
  };
  fs::atomic_write(dir / "config.json", cfg.dump(2) + "\n");
  std::string log;
  for (const auto& e : d.training_log) {
    nlohmann::json j = {{"samples_seen", e.samples_seen}, {"eval_loss", e.eval_loss}};
    j["degradation_loss"] = e.degradation_loss ? nlohmann::json(*e.degradation_loss) : nlohmann::json(nullptr);
    log += j.dump() + "\n";
  }
  fs::atomic_write(dir / "training_log.jsonl", log);
}

inline TrainedDetector load_checkpoint(const std::filesystem::path& dir) {
  const auto cfg = nlohmann::json::parse(fs::read_file(dir / "config.json"));
  TrainedDetector d;
  d.detector_id = cfg.at("detector_id");
  d.train_dataset_id = cfg.at("train_dataset_id");
  d.config.base_model = parse_base_model(cfg.at("base_model").get<std::string>());
  d.config.method = parse_method(cfg.at("method").get<std::string>());
  d.config.learning_rate = cfg.at("learning_rate").get<double>();
  d.config.batch_size = cfg.at("batch_size").get<std::size_t>();
  d.config.epochs = cfg.at("epochs");
  d.config.eval_interval_samples = cfg.at("eval_interval_samples");
  d.config.warmup_fraction = cfg.at("warmup_fraction");
  d.config.weight_decay = cfg.at("weight_decay");
  d.config.seed = cfg.at("seed");
  d.best_eval_loss = cfg.at("best_eval_loss");
  d.model = EncoderModel(arch_from_json(cfg.at("arch")), 0);
  d.model.params() = deserialize_params(fs::read_file(dir / "weights.bin"));
  std::istringstream lines(fs::read_file(dir / "training_log.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TrainLogEntry e{j.at("samples_seen"), j.at("eval_loss"), std::nullopt};
    if (!j.at("degradation_loss").is_null()) e.degradation_loss = j.at("degradation_loss").get<double>();
    d.training_log.push_back(e);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Detector adapter

class TrainedDetectorAdapter : public Detector {
 public:
  explicit TrainedDetectorAdapter(std::shared_ptr<const TrainedDetector> d)
      : d_(std::move(d)), version_(sha256_hex(serialize_params(d_->model.params())).substr(0, 16)) {}

  std::string id() const override { return d_->detector_id; }
  DetectorFamily family() const override { return DetectorFamily::trained; }
  std::string version() const override { return version_; }
  std::size_t max_concurrency() const override { return 0; }

  // P(machine). Texts longer than the model context are cut and counted.
  double score(const std::string& text) override {
    if (text.empty()) throw InputError("cannot score an empty text");
    bool truncated = false;
    const double p = d_->model.machine_probability(text, &truncated);
    if (truncated) ++truncated_;
    return p;
  }

  std::size_t truncated_count() const { return truncated_.load(); }

 private:
  std::shared_ptr<const TrainedDetector> d_;
  std::string version_;
  std::atomic<std::size_t> truncated_{0};
};

}  // namespace mgtbench
