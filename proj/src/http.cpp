#include "rlvrdetect/http.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <thread>

#include "rlvrdetect/error.hpp"

namespace rlvrdetect::http {

Url parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(Errc::InvalidConfig, "endpoint URL '" + std::string(url) + "' has no scheme");
  }
  const std::string_view scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(Errc::InvalidConfig, "unsupported URL scheme '" + std::string(scheme) + "'");
  }
  const std::string_view rest = url.substr(scheme_end + 3);
  const auto path_start = rest.find('/');
  const std::string_view authority = rest.substr(0, path_start);
  if (authority.empty() || authority.front() == ':') {
    throw Error(Errc::InvalidConfig, "endpoint URL '" + std::string(url) + "' has no host");
  }
  if (const auto colon = authority.rfind(':'); colon != std::string_view::npos) {
    const std::string_view port = authority.substr(colon + 1);
    if (port.empty() || !std::all_of(port.begin(), port.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw Error(Errc::InvalidConfig, "endpoint URL '" + std::string(url) + "' has a bad port");
    }
  }
  Url out;
  out.origin = std::string(scheme) + "://" + std::string(authority);
  if (path_start != std::string_view::npos) {
    out.base_path = std::string(rest.substr(path_start));
    while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  }
  return out;
}

bool is_retryable_status(int status) noexcept { return status == 408 || status == 429 || status >= 500; }

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::size_t attempt) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  const double base = static_cast<double>(policy.base_backoff.count());
  const double cap = static_cast<double>(policy.max_backoff.count());
  const double full = std::min(cap, base * static_cast<double>(1ull << std::min<std::size_t>(attempt, 30)));
  std::uniform_real_distribution<double> jitter(0.5, 1.0);
  return std::chrono::milliseconds(static_cast<long long>(full * jitter(rng)));
}

std::optional<std::string> api_key_from_env(const std::string& variable) {
  if (const char* value = std::getenv(variable.c_str()); value != nullptr && *value != '\0') {
    return std::string(value);
  }
  return std::nullopt;
}

JsonClient::JsonClient(ClientOptions options) : options_(std::move(options)), url_(parse_url(options_.base_url)) {}

nlohmann::json JsonClient::post(std::string_view path, const nlohmann::json& body) const {
  const std::string target = url_.base_path + std::string(path);
  const std::string payload = body.dump();
  const auto timeout = std::chrono::duration<double>(options_.timeout_seconds);

  int last_status = 0;
  std::string last_detail;
  for (std::size_t attempt = 0; attempt <= options_.retry.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(backoff_delay(options_.retry, attempt - 1));

    // httplib clients are not shareable across threads; one per attempt.
    httplib::Client client(url_.origin);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (options_.api_key) headers.emplace("Authorization", "Bearer " + *options_.api_key);

    auto result = client.Post(target, headers, payload, "application/json");
    if (!result) {
      last_status = 0;
      last_detail = "transport error: " + httplib::to_string(result.error());
      continue;
    }
    last_status = result->status;
    if (result->status >= 200 && result->status < 300) {
      try {
        return nlohmann::json::parse(result->body);
      } catch (const nlohmann::json::parse_error& e) {
        throw EndpointError(result->status, options_.base_url + target + ": invalid JSON response: " + e.what());
      }
    }
    last_detail = "HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200);
    if (result->status == 401 || result->status == 403) {
      throw Error(Errc::AuthError, options_.base_url + target + " rejected credentials (" + last_detail + ")");
    }
    if (!is_retryable_status(result->status)) break;
  }
  throw EndpointError(last_status, options_.base_url + target + ": " + last_detail);
}

}  // namespace rlvrdetect::http
