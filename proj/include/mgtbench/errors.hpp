#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mgtbench {

// Root of every error the harness raises on purpose. `kind()` is a stable
// machine-readable tag used by the CLI when mapping failures to exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MGTBENCH_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  };

MGTBENCH_DEFINE_ERROR(ConfigError)
MGTBENCH_DEFINE_ERROR(InputError)
MGTBENCH_DEFINE_ERROR(TooShort)
MGTBENCH_DEFINE_ERROR(InsufficientData)
MGTBENCH_DEFINE_ERROR(TemplateError)
MGTBENCH_DEFINE_ERROR(InputTooLong)
MGTBENCH_DEFINE_ERROR(CorpusGenerationError)
MGTBENCH_DEFINE_ERROR(AttackBuildError)
MGTBENCH_DEFINE_ERROR(ParaphraseError)
MGTBENCH_DEFINE_ERROR(ScoreError)
MGTBENCH_DEFINE_ERROR(TrainError)
MGTBENCH_DEFINE_ERROR(ProbeError)
MGTBENCH_DEFINE_ERROR(MetricError)
MGTBENCH_DEFINE_ERROR(ReportError)
MGTBENCH_DEFINE_ERROR(VersionError)

#undef MGTBENCH_DEFINE_ERROR

// Raised by a generator backend. Only retryable failures (transport errors,
// timeouts, HTTP 429/5xx) are retried by the generation layer.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retryable)
      : Error("BackendError", what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class PrefixTooShort : public Error {
 public:
  PrefixTooShort(std::string article_id, std::size_t tokens)
      : Error("PrefixTooShort", "article '" + article_id + "' has only " +
                                    std::to_string(tokens) + " words, need 10"),
        article_id_(std::move(article_id)) {}
  const std::string& article_id() const noexcept { return article_id_; }

 private:
  std::string article_id_;
};

}  // namespace mgtbench
