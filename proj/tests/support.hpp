#pragma once

// Shared fixtures for the test binaries: temp dirs, mock generators, a small
// paired dataset, and a local HTTP server for the remote contracts.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "mgtbench/backends.hpp"
#include "mgtbench/corpus.hpp"
#include "mgtbench/synth.hpp"

namespace testsupport {

namespace stdfs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mgt") {
    static std::atomic<int> n{0};
    path_ = stdfs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    stdfs::remove_all(path_);
    stdfs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    stdfs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const stdfs::path& path() const { return path_; }
  stdfs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  stdfs::path path_;
};

// Deterministic stand-in generator: echoes the prompt's last user line, then
// pads with filler words derived from a hash of the request. Behaviour knobs
// let tests force failures and count calls.
class ScriptedBackend : public mgtbench::GeneratorBackend {
 public:
  explicit ScriptedBackend(std::string name = "scripted", mgtbench::PromptMode kind = mgtbench::PromptMode::completion)
      : name_(std::move(name)), kind_(kind) {}

  std::string name() const override { return name_; }
  mgtbench::PromptMode kind() const override { return kind_; }
  mgtbench::BackendCapabilities capabilities() const override { return caps; }

  std::string complete(const mgtbench::GenerationRequest& req) override {
    ++calls;
    {
      std::lock_guard lock(mu_);
      last = req;
    }
    if (fail_if && fail_if(req)) throw mgtbench::BackendError("scripted failure", retryable_failures);
    std::string lead = req.forced_prefix.value_or(req.prompt.mode == mgtbench::PromptMode::completion ? req.prompt.prompt : "");
    const auto h = mgtbench::fnv1a64(req.prompt.flat() + req.params.to_json().dump());
    std::string body;
    for (int i = 0; i < words; ++i) body += (body.empty() ? "" : " ") + std::string(filler[(h >> (i % 32)) % std::size(filler)]) + std::to_string(i % 7);
    return lead.empty() ? body : lead + " " + body;
  }

  mgtbench::BackendCapabilities caps{true, true, 0};
  int words = 140;
  bool retryable_failures = false;
  std::function<bool(const mgtbench::GenerationRequest&)> fail_if;
  std::atomic<int> calls{0};
  mgtbench::GenerationRequest last;

 private:
  std::mutex mu_;
  static constexpr const char* filler[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"};
  std::string name_;
  mgtbench::PromptMode kind_;
};

// n human articles from the synthetic news register.
inline std::vector<mgtbench::RawRecord> human_records(std::size_t n, std::uint64_t seed = 1) {
  return mgtbench::synth::corpus(mgtbench::synth::human_register(), n, seed, "h");
}

// A split paired dataset built with `backend` over n synthetic articles.
inline mgtbench::PairedDataset build_dataset(mgtbench::GeneratorBackend& backend, std::size_t n, std::uint64_t seed = 5,
                                             const std::string& id = "mock") {
  const auto articles = mgtbench::ingest_articles(human_records(n), "synthnews");
  std::vector<mgtbench::Prefix> prefixes;
  for (const auto& a : articles) {
    if (!a.too_short) prefixes.push_back(mgtbench::extract_prefix(a));
  }
  mgtbench::GenerationParams gp;
  gp.seed = seed;
  const auto res = mgtbench::generate_corpus(backend, prefixes, mgtbench::default_chat_template(), gp, {4});
  auto ds = mgtbench::build_paired_dataset(articles, res.texts, seed, {id, backend.name(), "synthnews", "chat_default"});
  return mgtbench::split_dataset(std::move(ds), seed);
}

// A bigram generator trained on one machine register.
inline std::shared_ptr<mgtbench::LocalModelBackend> ngram_backend(const std::string& variant, std::uint64_t seed,
                                                                  mgtbench::PromptMode kind = mgtbench::PromptMode::completion,
                                                                  double top_p = 0.9) {
  std::vector<std::string> texts;
  for (auto& r : mgtbench::synth::corpus(mgtbench::synth::machine_register(variant), 200, seed)) texts.push_back(r.text);
  auto model = std::make_shared<mgtbench::BigramModel>(mgtbench::WordTokenizer::from_texts(texts), texts, 0.9);
  mgtbench::LocalBackendOptions o;
  o.name = "gen-" + variant;
  o.kind = kind;
  o.top_p = top_p;
  return std::make_shared<mgtbench::LocalModelBackend>(model, o);
}

// httplib server on an ephemeral port, serving one POST handler.
class MockServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit MockServer(Handler h, const std::string& path = "/v1") {
    server_.Post(path, [h](const httplib::Request& req, httplib::Response& res) { h(req, res); });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    url_ = "http://127.0.0.1:" + std::to_string(port_) + path;
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  const std::string& url() const { return url_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::string url_;
};

inline mgtbench::RetryPolicy fast_retry(int attempts = 3) {
  mgtbench::RetryPolicy r;
  r.attempts = attempts;
  r.initial_backoff = std::chrono::milliseconds(1);
  return r;
}

inline int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string out_file = (stdfs::temp_directory_path() / ("mgtcli-" + std::to_string(::getpid()) + ".out")).string();
  const std::string cmd = std::string(MGTBENCH_CLI) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(out_file);
    output->assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  stdfs::remove(out_file);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace testsupport
