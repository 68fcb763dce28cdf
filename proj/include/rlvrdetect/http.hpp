#pragma once

// JSON-over-HTTP POST with the retry contract shared by the sampler and every
// external provider (embeddings, NLI, labeler).

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace rlvrdetect::http {

struct Url {
  std::string origin;     // scheme://host[:port]
  std::string base_path;  // path prefix without trailing slash, may be empty
};

/// Throws Error(InvalidConfig) for anything that is not http(s)://host[:port][/path].
Url parse_url(std::string_view url);

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
};

/// 408, 429 and 5xx.
bool is_retryable_status(int status) noexcept;

/// Exponential backoff for the given 0-based attempt with jitter in [50%, 100%].
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::size_t attempt);

struct ClientOptions {
  std::string base_url;
  double timeout_seconds = 120.0;
  RetryPolicy retry;
  std::optional<std::string> api_key;
};

inline constexpr const char* kDefaultApiKeyVariable = "RLVRDETECT_API_KEY";

std::optional<std::string> api_key_from_env(const std::string& variable = kDefaultApiKeyVariable);

class JsonClient {
 public:
  explicit JsonClient(ClientOptions options);

  /// POSTs `body` to base_url + path. Transport errors and retryable statuses
  /// are retried up to max_retries times; 401/403 raise AuthError at once and
  /// other 4xx raise EndpointError at once.
  nlohmann::json post(std::string_view path, const nlohmann::json& body) const;

  const std::string& base_url() const noexcept { return options_.base_url; }

 private:
  ClientOptions options_;
  Url url_;
};

}  // namespace rlvrdetect::http
