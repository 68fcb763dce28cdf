#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "rlvrdetect/error.hpp"
#include "rlvrdetect/http.hpp"
#include "rlvrdetect/sampler.hpp"
#include "rlvrdetect/stub_server.hpp"

using namespace rlvrdetect;
using namespace rlvrdetect::sampler;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("rlvrdetect-sampler-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SamplingConfig config_for(const stub::StubServer& server, const fs::path& cache) {
  SamplingConfig c;
  c.endpoint_url = server.url();
  c.model_name = "stub/model:1";
  c.base_backoff = std::chrono::milliseconds(1);
  c.cache_dir = cache;
  c.api_key_env = "RLVRDETECT_TEST_UNSET_KEY";
  return c;
}

std::vector<corpus::PromptRecord> prompts(std::size_t n) {
  std::vector<corpus::PromptRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = "q" + std::to_string(i);
    out[i].prompt = "question number " + std::to_string(i);
  }
  return out;
}

}  // namespace

TEST_CASE("echo stub returns resp-i and caches the set") {
  stub::StubServer server;
  server.start();
  TempDir dir;
  Sampler s(config_for(server, dir.path));
  const auto set = s.sample_completions("p1", "What is 2+2?");
  REQUIRE(set.completions.size() == 32);
  for (std::size_t i = 0; i < 32; ++i) CHECK(set.completions[i] == "resp-" + std::to_string(i));
  CHECK_FALSE(set.partial);
  CHECK(set.truncated_flags.size() == 32);
  CHECK(server.request_count() == 1);

  server.reset_request_count();
  Sampler again(config_for(server, dir.path));
  const auto hit = again.sample_completions("p1", "What is 2+2?");
  CHECK(hit == set);
  CHECK(server.request_count() == 0);
  CHECK(fs::exists(dir.path / "stub_model_1" / "completions.jsonl"));
}

TEST_CASE("greedy completion is cached separately") {
  stub::StubServer server;
  server.start();
  TempDir dir;
  Sampler s(config_for(server, dir.path));
  CHECK(s.greedy_completion("p", "prompt") == "greedy-resp");
  CHECK(server.request_count() == 1);
  CHECK(s.greedy_completion("p", "prompt") == "greedy-resp");
  CHECK(server.request_count() == 1);
  CHECK(fs::exists(s.config().cache_dir / "stub_model_1" / "greedy.jsonl"));
}

TEST_CASE("retries end in EndpointError carrying the last status") {
  stub::StubOptions options;
  options.fail_first = 3;
  stub::StubServer server(options);
  server.start();
  auto c = config_for(server, {});
  c.max_retries = 2;
  Sampler s(c);
  try {
    s.sample_completions("p", "x");
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.status() == 500);
  }
  CHECK(server.request_count() == 3);
  // The fourth request succeeds.
  CHECK(s.sample_completions("p", "x").completions.size() == 32);
}

TEST_CASE("transient failures are retried") {
  stub::StubOptions options;
  options.fail_first = 2;
  options.fail_status = 429;
  stub::StubServer server(options);
  server.start();
  auto c = config_for(server, {});
  c.max_retries = 3;
  Sampler s(c);
  CHECK(s.sample_completions("p", "x").completions.size() == 32);
  CHECK(server.request_count() == 3);
}

TEST_CASE("unreachable host and bad urls") {
  SamplingConfig c;
  c.endpoint_url = "http://127.0.0.1:1";
  c.model_name = "m";
  c.max_retries = 1;
  c.base_backoff = std::chrono::milliseconds(1);
  c.request_timeout = 2;
  Sampler s(c);
  CHECK_THROWS_AS(s.greedy_completion("p", "x"), EndpointError);

  c.endpoint_url = "not a url";
  try {
    Sampler bad(c);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidConfig);
  }
}

TEST_CASE("missing credentials raise AuthError") {
  stub::StubOptions options;
  options.api_key = "sekret";
  stub::StubServer server(options);
  server.start();
  auto c = config_for(server, {});
  Sampler s(c);
  try {
    s.sample_completions("p", "x");
    FAIL("expected AuthError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AuthError);
  }
  CHECK(server.request_count() == 1);

  ::setenv("RLVRDETECT_TEST_KEY", "sekret", 1);
  c.api_key_env = "RLVRDETECT_TEST_KEY";
  TempDir dir;
  c.cache_dir = dir.path;
  Sampler keyed(c);
  CHECK(keyed.sample_completions("p", "x").completions.size() == 32);
  // The key never reaches the cache.
  std::ifstream in(dir.path / "stub_model_1" / "completions.jsonl");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("sekret") == std::string::npos);
}

TEST_CASE("server-capped n falls back to several requests") {
  stub::StubOptions options;
  options.max_n = 5;
  stub::StubServer server(options);
  server.start();
  Sampler s(config_for(server, {}));
  const auto set = s.sample_completions("p", "x");
  REQUIRE(set.completions.size() == 32);
  CHECK(set.completions[5] == "resp-0");
  CHECK(set.completions[31] == "resp-1");
  CHECK(server.request_count() == 7);
}

TEST_CASE("chat mode and prompt logprobs") {
  stub::StubServer server;
  server.start();
  auto c = config_for(server, {});
  c.api_mode = ApiMode::Chat;
  c.n_samples = 4;
  Sampler chat(c);
  const auto set = chat.sample_completions("p", "x");
  CHECK(set.completions == std::vector<std::string>{"resp-0", "resp-1", "resp-2", "resp-3"});

  c.api_mode = ApiMode::Completions;
  c.request_logprobs = true;
  Sampler scored(c);
  const auto with = scored.sample_completions("p", "three word prompt");
  REQUIRE(with.prompt_logprobs.has_value());
  CHECK(*with.prompt_logprobs == stub::pseudo_prompt_logprobs("three word prompt"));
  REQUIRE(with.logprobs.has_value());
  CHECK(with.logprobs->size() == 4);

  stub::StubOptions no_echo;
  no_echo.score_prompts = false;
  stub::StubServer plain(no_echo);
  plain.start();
  auto pc = config_for(plain, {});
  pc.request_logprobs = true;
  pc.n_samples = 2;
  Sampler unscored(pc);
  const auto without = unscored.sample_completions("p", "x");
  CHECK_FALSE(without.prompt_logprobs.has_value());
  CHECK_FALSE(without.partial);
}

TEST_CASE("fingerprints track output-affecting fields only") {
  SamplingConfig base;
  base.endpoint_url = "http://h";
  base.model_name = "m";
  const auto fp = config_fingerprint(base);
  CHECK(fp == config_fingerprint(base));
  auto changed = [&](auto mutate) {
    auto c = base;
    mutate(c);
    return config_fingerprint(c) != fp;
  };
  CHECK(changed([](SamplingConfig& c) { c.temperature = 0.8; }));
  CHECK(changed([](SamplingConfig& c) { c.top_p = 0.9; }));
  CHECK(changed([](SamplingConfig& c) { c.max_tokens = 512; }));
  CHECK(changed([](SamplingConfig& c) { c.model_name = "other"; }));
  CHECK(changed([](SamplingConfig& c) { c.n_samples = 16; }));
  CHECK(changed([](SamplingConfig& c) { c.prompt_template = "Q: {prompt}"; }));
  CHECK(changed([](SamplingConfig& c) { c.api_mode = ApiMode::Chat; }));
  CHECK_FALSE(changed([](SamplingConfig& c) { c.request_timeout = 5; }));
  CHECK_FALSE(changed([](SamplingConfig& c) { c.max_retries = 9; }));
  CHECK_FALSE(changed([](SamplingConfig& c) { c.concurrency_limit = 16; }));
  CHECK_FALSE(changed([](SamplingConfig& c) { c.cache_dir = "/elsewhere"; }));
}

TEST_CASE("batch sampling keeps order and records failures") {
  stub::StubOptions options;
  options.fail_prompt_substrings = {"number 6"};
  stub::StubServer server(options);
  server.start();
  TempDir dir;
  auto c = config_for(server, dir.path);
  c.concurrency_limit = 4;
  c.max_retries = 1;
  Sampler s(c);
  const auto ps = prompts(10);
  const auto sets = s.batch_sample(ps);
  REQUIRE(sets.size() == 10);
  std::size_t complete = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(sets[i].prompt_id == ps[i].id);
    if (!sets[i].partial) ++complete;
  }
  CHECK(complete == 9);
  CHECK(sets[6].partial);
  CHECK(sets[6].error.has_value());

  CHECK(s.batch_sample(std::span<const corpus::PromptRecord>{}).empty());

  // Warm cache: only the failed prompt goes back to the network.
  server.reset_request_count();
  Sampler warm(c);
  const auto again = warm.batch_sample(ps);
  CHECK(server.request_count() == 2);
  for (std::size_t i = 0; i < 10; ++i) {
    if (i != 6) CHECK(again[i] == sets[i]);
  }
}

TEST_CASE("per-request seeds follow the request index") {
  stub::StubOptions options;
  options.mode = stub::Mode::Synthetic;
  options.max_n = 4;
  stub::StubServer server(options);
  server.start();
  auto c = config_for(server, {});
  c.n_samples = 8;
  c.seed = 5;
  const auto a = Sampler(c).sample_completions("p", "synthetic prompt");
  const auto b = Sampler(c).sample_completions("p", "synthetic prompt");
  CHECK(a.completions == b.completions);
  CHECK(a.completions[0] != a.completions[4]);
}

TEST_CASE("http helpers") {
  CHECK(http::is_retryable_status(500));
  CHECK(http::is_retryable_status(503));
  CHECK(http::is_retryable_status(429));
  CHECK(http::is_retryable_status(408));
  CHECK_FALSE(http::is_retryable_status(400));
  CHECK_FALSE(http::is_retryable_status(404));
  const auto url = http::parse_url("https://api.example.com:8443/proxy/");
  CHECK(url.origin == "https://api.example.com:8443");
  CHECK(url.base_path == "/proxy");
  http::RetryPolicy policy;
  for (std::size_t attempt = 0; attempt < 6; ++attempt) {
    const auto d = http::backoff_delay(policy, attempt);
    CHECK(d <= policy.max_backoff);
    CHECK(d.count() >= 0);
  }
}
