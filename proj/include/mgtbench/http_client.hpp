#pragma once

#include <chrono>
#include <map>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "mgtbench/errors.hpp"

namespace mgtbench {

struct HttpResponse {
  int status = 0;
  std::string body;
};

// POSTs JSON to a fixed endpoint. Transport failures and timeouts surface as
// retryable BackendErrors; status handling is left to the caller.
class JsonHttpClient {
 public:
  explicit JsonHttpClient(const std::string& url, std::chrono::milliseconds timeout = std::chrono::seconds(60),
                          std::map<std::string, std::string> headers = {})
      : url_(url), timeout_(timeout), headers_(std::move(headers)) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' lacks a scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  }

  HttpResponse post(const nlohmann::json& body) const {
    httplib::Client cli(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    httplib::Headers h;
    for (const auto& [k, v] : headers_) h.emplace(k, v);
    auto res = cli.Post(path_, h, body.dump(), "application/json");
    if (!res) throw BackendError("POST " + url_ + " failed: " + httplib::to_string(res.error()), true);
    return {res->status, res->body};
  }

  const std::string& url() const { return url_; }

 private:
  std::string url_;
  std::string origin_;
  std::string path_;
  std::chrono::milliseconds timeout_;
  std::map<std::string, std::string> headers_;
};

}  // namespace mgtbench
