#pragma once

#include <cstdlib>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "mgtbench/detectors.hpp"
#include "mgtbench/generation.hpp"
#include "mgtbench/http_client.hpp"

namespace mgtbench {

inline constexpr const char* kDetectorApiKeyEnv = "MGTBENCH_DETECTOR_API_KEY";

struct RemoteDetectorOptions {
  std::string id = "remote";
  std::string endpoint;
  std::string api_key;
  // Provider model/version we expect; the versions actually reported by the
  // provider are collected in observed_versions().
  std::string version = "unversioned";
  RetryPolicy retry{};
  std::chrono::milliseconds timeout = std::chrono::seconds(30);
  std::size_t max_concurrency = 4;
};

// Maps a provider response to P(machine). Accepted shapes:
//   {"score": p}
//   {"class_probabilities": {"ai"|"machine": p, ...}}
// A bare verdict without a continuous score cannot be calibrated and is
// rejected.
inline double machine_probability(const nlohmann::json& body) {
  double p = 0.0;
  if (body.contains("score") && body["score"].is_number()) {
    p = body["score"].get<double>();
  } else if (body.contains("class_probabilities") && body["class_probabilities"].is_object()) {
    const auto& cp = body["class_probabilities"];
    if (cp.contains("machine")) {
      p = cp["machine"].get<double>();
    } else if (cp.contains("ai")) {
      p = cp["ai"].get<double>();
    } else {
      throw ScoreError("class_probabilities has no machine/ai entry");
    }
  } else if (body.contains("predicted_class") || body.contains("label") || body.contains("verdict")) {
    throw ConfigError("provider returns only a class verdict; a continuous score is required for calibration");
  } else {
    throw ScoreError("provider response has no score");
  }
  if (!(p >= 0.0 && p <= 1.0)) throw ScoreError("provider score " + std::to_string(p) + " outside [0,1]");
  return p;
}

// Wire contract: POST {text} -> {score in [0,1], version}. Responses are
// cached by content hash, so repeated texts cost no further requests.
class RemoteDetector : public Detector {
 public:
  explicit RemoteDetector(RemoteDetectorOptions opts)
      : opts_(std::move(opts)),
        client_(opts_.endpoint, opts_.timeout, {{"Authorization", "Bearer " + opts_.api_key}}) {
    if (opts_.api_key.empty()) {
      throw ConfigError("remote detector '" + opts_.id + "' has no API key (set " + kDetectorApiKeyEnv + ")");
    }
  }

  std::string id() const override { return opts_.id; }
  DetectorFamily family() const override { return DetectorFamily::remote_api; }
  std::string version() const override { return opts_.version; }
  std::size_t max_concurrency() const override { return opts_.max_concurrency; }

  double score(const std::string& text) override {
    const std::string h = sha256_hex(text);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(h); it != cache_.end()) return it->second;
    }
    nlohmann::json body;
    try {
      body = with_retry(opts_.retry, [&] {
        {
          std::lock_guard lock(mu_);
          ++requests_;
        }
        return request(text);
      });
    } catch (const BackendError& e) {
      throw ScoreError(opts_.id + ": " + e.what());
    }
    const double p = machine_probability(body);
    std::lock_guard lock(mu_);
    cache_[h] = p;
    if (body.contains("version") && body["version"].is_string()) versions_.insert(body["version"].get<std::string>());
    return p;
  }

  std::size_t request_count() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::set<std::string> observed_versions() const {
    std::lock_guard lock(mu_);
    return versions_;
  }

 private:
  nlohmann::json request(const std::string& text) const {
    const auto res = client_.post({{"text", text}});
    if (res.status == 200) {
      auto j = nlohmann::json::parse(res.body, nullptr, false);
      if (j.is_discarded()) throw BackendError("malformed provider response", false);
      return j;
    }
    if (res.status == 429 || res.status >= 500) {
      throw BackendError("HTTP " + std::to_string(res.status), true);
    }
    throw ConfigError(opts_.id + ": provider rejected request with HTTP " + std::to_string(res.status));
  }

  RemoteDetectorOptions opts_;
  JsonHttpClient client_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, double> cache_;
  std::set<std::string> versions_;
  std::size_t requests_ = 0;
};

}  // namespace mgtbench
