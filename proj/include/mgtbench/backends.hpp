#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include <json.hpp>

#include "mgtbench/digest.hpp"
#include "mgtbench/generation.hpp"
#include "mgtbench/http_client.hpp"
#include "mgtbench/language_model.hpp"

namespace mgtbench {

struct LocalBackendOptions {
  std::string name = "ngram";
  PromptMode kind = PromptMode::completion;
  bool supports_forced_prefix = true;
  bool supports_system_prompt = true;
  // Per-token probability of ending the generation once min_new_tokens is met.
  double eos_probability = 0.0;
  // Backend default nucleus sampling; 1.0 samples the full distribution.
  double top_p = 1.0;
  std::size_t context_limit = 2048;
};

// In-process generator sampling from a TokenModel. Sampling is seeded from
// (params.seed, prompt, forced prefix), so identical requests give identical
// text regardless of call order or thread.
class LocalModelBackend : public GeneratorBackend {
 public:
  LocalModelBackend(std::shared_ptr<const TokenModel> model, LocalBackendOptions opts)
      : model_(std::move(model)), opts_(std::move(opts)) {}

  std::string name() const override { return opts_.name; }
  PromptMode kind() const override { return opts_.kind; }
  BackendCapabilities capabilities() const override {
    return {opts_.supports_forced_prefix, opts_.supports_system_prompt, 0};
  }

  std::string complete(const GenerationRequest& req) override {
    req.params.validate();
    const auto& tok = model_->tokenizer();
    std::string lead;
    if (req.prompt.mode == PromptMode::completion) {
      lead = req.prompt.prompt;
    } else if (req.forced_prefix) {
      lead = *req.forced_prefix;
    } else if (!req.prompt.messages.empty()) {
      lead = req.prompt.messages.back().content;
    }
    std::vector<int> context = tok.encode(lead);
    if (context.size() + static_cast<std::size_t>(req.params.max_new_tokens) > opts_.context_limit) {
      throw InputTooLong("prompt of " + std::to_string(context.size()) + " tokens exceeds the context of " + opts_.name);
    }

    Rng rng(fnv1a64(req.prompt.flat() + '\x1f' + req.forced_prefix.value_or(""), req.params.seed.value_or(0)));
    const std::size_t min_new = static_cast<std::size_t>(req.params.min_new_tokens.value_or(0));
    std::vector<int> fresh;
    for (std::size_t i = 0; i < static_cast<std::size_t>(req.params.max_new_tokens); ++i) {
      if (i >= min_new && opts_.eos_probability > 0.0 && rng.bernoulli(opts_.eos_probability)) break;
      auto lp = model_->next_log_probs(context);
      lp[0] = -std::numeric_limits<double>::infinity();  // never emit <unk>
      const int t = sample_next(lp, req.params.temperature, req.params.repetition_penalty, context, rng, opts_.top_p);
      context.push_back(t);
      fresh.push_back(t);
    }

    const std::string body = tok.decode(fresh);
    if (req.prompt.mode == PromptMode::chat && !req.forced_prefix) return body;
    return body.empty() ? lead : lead + " " + body;
  }

  json describe() const override {
    return {{"name", opts_.name},
            {"kind", to_string(opts_.kind)},
            {"type", "local"},
            {"tokenizer", model_->tokenizer().id()},
            {"top_p", opts_.top_p},
            {"eos_probability", opts_.eos_probability}};
  }

 private:
  std::shared_ptr<const TokenModel> model_;
  LocalBackendOptions opts_;
};

struct RemoteBackendOptions {
  std::string name;
  PromptMode kind = PromptMode::chat;
  std::string endpoint;
  BackendCapabilities capabilities{};
  std::chrono::milliseconds timeout = std::chrono::seconds(120);
};

// Wire contract: POST {prompt | messages, temperature, repetition_penalty,
// max_new_tokens, min_new_tokens?, seed?, forced_prefix?} -> {text}.
class RemoteBackend : public GeneratorBackend {
 public:
  explicit RemoteBackend(RemoteBackendOptions opts) : opts_(std::move(opts)), client_(opts_.endpoint, opts_.timeout) {}

  std::string name() const override { return opts_.name; }
  PromptMode kind() const override { return opts_.kind; }
  BackendCapabilities capabilities() const override { return opts_.capabilities; }

  static json request_body(const GenerationRequest& req) {
    json body = req.params.to_json();
    if (req.prompt.mode == PromptMode::completion) {
      body["prompt"] = req.prompt.prompt;
    } else {
      json msgs = json::array();
      for (const auto& m : req.prompt.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
      body["messages"] = msgs;
    }
    if (req.forced_prefix) body["forced_prefix"] = *req.forced_prefix;
    return body;
  }

  std::string complete(const GenerationRequest& req) override {
    const auto res = client_.post(request_body(req));
    if (res.status == 200) {
      const auto j = json::parse(res.body, nullptr, false);
      if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
        throw BackendError(opts_.name + ": malformed response body", false);
      }
      return j["text"].get<std::string>();
    }
    if (res.status == 413 || res.body.find("context_length") != std::string::npos) {
      throw InputTooLong(opts_.name + ": prompt exceeds model context");
    }
    const bool retryable = res.status == 429 || res.status >= 500;
    throw BackendError(opts_.name + ": HTTP " + std::to_string(res.status), retryable);
  }

  json describe() const override {
    return {{"name", opts_.name}, {"kind", to_string(opts_.kind)}, {"type", "remote"}, {"endpoint", opts_.endpoint}};
  }

 private:
  RemoteBackendOptions opts_;
  JsonHttpClient client_;
};

}  // namespace mgtbench
