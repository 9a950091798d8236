#pragma once

// Generator abstraction. Every model, local or remote, sits behind
// GeneratorBackend; the harness only sees rendered prompts in and raw text
// out. Chat outputs are forced to open with the article prefix.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mgtbench/corpus.hpp"
#include "mgtbench/errors.hpp"
#include "mgtbench/parallel.hpp"
#include "mgtbench/text.hpp"

namespace mgtbench {

using json = nlohmann::json;

struct GenerationParams {
  double temperature = 1.0;
  double repetition_penalty = 1.0;
  int max_new_tokens = 200;
  std::optional<int> min_new_tokens;
  std::optional<std::uint64_t> seed;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(repetition_penalty >= 1.0)) throw ConfigError("repetition_penalty must be >= 1");
    if (max_new_tokens <= 0) throw ConfigError("max_new_tokens must be positive");
    if (min_new_tokens && (*min_new_tokens < 0 || *min_new_tokens > max_new_tokens)) {
      throw ConfigError("min_new_tokens must lie in [0, max_new_tokens]");
    }
  }

  json to_json() const {
    json j = {{"temperature", temperature}, {"repetition_penalty", repetition_penalty}, {"max_new_tokens", max_new_tokens}};
    if (min_new_tokens) j["min_new_tokens"] = *min_new_tokens;
    if (seed) j["seed"] = *seed;
    return j;
  }

  static GenerationParams from_json(const json& j) {
    GenerationParams p;
    p.temperature = j.value("temperature", p.temperature);
    p.repetition_penalty = j.value("repetition_penalty", p.repetition_penalty);
    p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
    if (j.contains("min_new_tokens") && !j["min_new_tokens"].is_null()) p.min_new_tokens = j["min_new_tokens"].get<int>();
    if (j.contains("seed") && !j["seed"].is_null()) p.seed = j["seed"].get<std::uint64_t>();
    return p;
  }

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

enum class PromptMode { completion, chat };

inline const char* to_string(PromptMode m) { return m == PromptMode::chat ? "chat" : "completion"; }

inline constexpr std::string_view kPrefixSlot = "{prefix}";
inline constexpr std::string_view kFakeTextSlot = "{fake_text}";

struct PromptTemplate {
  std::string prompt_id;
  std::optional<std::string> system;
  std::string user;
  PromptMode mode = PromptMode::chat;

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

struct ChatMessage {
  std::string role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct RenderedPrompt {
  PromptMode mode = PromptMode::completion;
  std::string prompt;                 // completion mode
  std::vector<ChatMessage> messages;  // chat mode
  std::string prompt_id;

  // The text the model conditions on, flattened; used for seeding mocks.
  std::string flat() const {
    if (mode == PromptMode::completion) return prompt;
    std::string out;
    for (const auto& m : messages) out += m.role + ": " + m.content + "\n";
    return out;
  }
};

inline PromptTemplate completion_template() { return {"completion", std::nullopt, std::string(kPrefixSlot), PromptMode::completion}; }

inline PromptTemplate default_chat_template() {
  return {"chat_default", "You are a helpful assistant.", "Continue to write this news article: {prefix}", PromptMode::chat};
}

namespace detail {

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace detail

// Substitutes the template's single placeholder verbatim.
inline RenderedPrompt render_prompt(const PromptTemplate& tpl, const std::string& prefix_or_text) {
  if (tpl.mode == PromptMode::completion && tpl.system) {
    throw TemplateError("completion template '" + tpl.prompt_id + "' must not carry a system prompt");
  }
  const std::size_t n_prefix = detail::count_occurrences(tpl.user, kPrefixSlot);
  const std::size_t n_fake = detail::count_occurrences(tpl.user, kFakeTextSlot);
  if (n_prefix + n_fake != 1) {
    throw TemplateError("template '" + tpl.prompt_id + "' must contain exactly one {prefix} or {fake_text} placeholder");
  }
  const std::string_view slot = n_prefix ? kPrefixSlot : kFakeTextSlot;
  std::string user = tpl.user;
  user.replace(user.find(slot), slot.size(), prefix_or_text);

  RenderedPrompt r;
  r.mode = tpl.mode;
  r.prompt_id = tpl.prompt_id;
  if (tpl.mode == PromptMode::completion) {
    r.prompt = std::move(user);
  } else {
    if (tpl.system) r.messages.push_back({"system", *tpl.system});
    r.messages.push_back({"user", std::move(user)});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Backends

struct BackendCapabilities {
  bool supports_forced_prefix = false;
  bool supports_system_prompt = true;
  // 0 means unbounded.
  std::size_t max_concurrency = 1;
};

struct GenerationRequest {
  RenderedPrompt prompt;
  GenerationParams params;
  // When set, the backend must start its output buffer with these tokens.
  std::optional<std::string> forced_prefix;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual std::string name() const = 0;
  virtual PromptMode kind() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  // Raw model text. Throws BackendError (retryable or not) or InputTooLong.
  virtual std::string complete(const GenerationRequest& request) = 0;
  // Version/config facts recorded in run manifests (sampling defaults etc.).
  virtual json describe() const { return {{"name", name()}, {"kind", to_string(kind())}}; }
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

// Runs `fn`, retrying only retryable BackendErrors with exponential backoff.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt >= policy.attempts) throw;
    }
    policy.sleep(delay);
    delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.multiplier));
  }
}

enum class PrefixPath { forced, verified, prepended };

inline const char* to_string(PrefixPath p) {
  switch (p) {
    case PrefixPath::forced: return "forced";
    case PrefixPath::verified: return "verified";
    case PrefixPath::prepended: return "prepended";
  }
  return "?";
}

struct Continuation {
  std::string text;
  PrefixPath path = PrefixPath::verified;
};

// One generation call. Output always begins with `prefix`: via constrained
// decoding when the backend supports it, otherwise by checking the output and
// prepending the prefix when it is missing.
inline Continuation generate_continuation(GeneratorBackend& backend, RenderedPrompt prompt, const std::string& prefix,
                                          const GenerationParams& params, const RetryPolicy& retry = {}) {
  params.validate();
  const auto caps = backend.capabilities();
  if (backend.kind() == PromptMode::completion && prompt.mode == PromptMode::chat) {
    // Completion models only ever see the bare prefix.
    prompt = RenderedPrompt{PromptMode::completion, prefix, {}, prompt.prompt_id};
  }
  if (prompt.mode == PromptMode::chat && !caps.supports_system_prompt) {
    std::erase_if(prompt.messages, [](const ChatMessage& m) { return m.role == "system"; });
  }

  GenerationRequest req{std::move(prompt), params, std::nullopt};
  const bool force = caps.supports_forced_prefix && req.prompt.mode == PromptMode::chat;
  if (force) req.forced_prefix = prefix;

  std::string out = with_retry(retry, [&] { return backend.complete(req); });
  if (text::starts_with(out, prefix)) return {std::move(out), force ? PrefixPath::forced : PrefixPath::verified};

  const std::string_view rest = text::trim_left(out);
  return {prefix + (rest.empty() ? "" : " ") + std::string(rest), PrefixPath::prepended};
}

struct ItemFailure {
  std::string article_id;
  std::string error;
};

struct CorpusOptions {
  std::size_t concurrency = 1;
  double max_failure_fraction = 0.02;
  RetryPolicy retry{};
};

struct CorpusResult {
  std::map<std::string, std::string> texts;
  std::map<std::string, PrefixPath> paths;
  std::vector<ItemFailure> failures;
};

// Generates one continuation per prefix with up to `concurrency` requests in
// flight. Results are keyed by article, so completion order is irrelevant.
inline CorpusResult generate_corpus(GeneratorBackend& backend, const std::vector<Prefix>& prefixes,
                                    const PromptTemplate& tpl, const GenerationParams& params,
                                    const CorpusOptions& opts = {}) {
  if (prefixes.empty()) throw InputError("generate_corpus needs at least one prefix");
  params.validate();
  std::size_t workers = std::max<std::size_t>(1, opts.concurrency);
  const auto cap = backend.capabilities().max_concurrency;
  if (cap > 0) workers = std::min(workers, cap);

  CorpusResult result;
  std::mutex mu;
  parallel_for(prefixes.size(), workers, [&](std::size_t i) {
    const Prefix& p = prefixes[i];
    const std::string joined = p.joined();
    try {
      auto c = generate_continuation(backend, render_prompt(tpl, joined), joined, params, opts.retry);
      std::lock_guard lock(mu);
      result.paths[p.origin_article_id] = c.path;
      result.texts[p.origin_article_id] = std::move(c.text);
    } catch (const Error& e) {
      std::lock_guard lock(mu);
      result.failures.push_back({p.origin_article_id, e.what()});
    }
  });
  std::sort(result.failures.begin(), result.failures.end(),
            [](const ItemFailure& a, const ItemFailure& b) { return a.article_id < b.article_id; });

  const double frac = static_cast<double>(result.failures.size()) / static_cast<double>(prefixes.size());
  if (frac > opts.max_failure_fraction) {
    std::string ids;
    for (const auto& f : result.failures) ids += (ids.empty() ? "" : ", ") + f.article_id + " (" + f.error + ")";
    throw CorpusGenerationError(std::to_string(result.failures.size()) + " of " + std::to_string(prefixes.size()) +
                                " generations failed, above the " + std::to_string(opts.max_failure_fraction) +
                                " limit: " + ids);
  }
  return result;
}

}  // namespace mgtbench
