#pragma once

// Deterministic in-process HTTP server speaking the subset of the
// OpenAI-compatible API the toolkit uses, plus the NLI endpoint. Used for
// offline tests and demos.
//
//   POST /v1/completions        "resp-{i}" choices (echo mode) or synthetic text
//   POST /v1/chat/completions   same, or rule-based n-gram labels for labeling requests
//   POST /v1/embeddings         hashed bag-of-words vectors
//   POST /v1/nli                entailment iff first tokens match, else neutral

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "rlvrdetect/synthetic.hpp"

namespace httplib {
class Server;
}

namespace rlvrdetect::stub {

enum class Mode { Echo, Synthetic };

struct StubOptions {
  Mode mode = Mode::Echo;
  // Most choices returned per request; 0 means no cap.
  std::size_t max_n = 0;
  // Synthetic mode: prompt texts answered with collapsed completions.
  std::set<std::string> seen_prompts;
  // Requests whose prompt contains any of these always get HTTP 500.
  std::vector<std::string> fail_prompt_substrings;
  // The first `fail_first` requests get `fail_status`.
  std::size_t fail_first = 0;
  int fail_status = 500;
  // When set, requests must carry "Authorization: Bearer <key>".
  std::optional<std::string> api_key;
  // Whether echo requests return prompt logprobs (otherwise HTTP 400).
  bool score_prompts = true;
  synthetic::BenchmarkOptions synthetic;
};

class StubServer {
 public:
  explicit StubServer(StubOptions options = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void serve_forever(const std::string& host, int port);
  void stop();

  int port() const noexcept { return port_; }
  std::string url() const;
  std::size_t request_count() const noexcept { return requests_.load(); }
  void reset_request_count() noexcept { requests_ = 0; }

 private:
  void install_routes();

  StubOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::string host_;
  std::atomic<std::size_t> requests_{0};
};

/// Labels a labeling request (the JSON message content) by rule: verbatim in
/// the problem -> restatement; digits or operators -> logic; lowercase words
/// only -> boilerplate; else other. Returns the JSON object text.
std::string rule_based_label_reply(const std::string& request_content);

/// Unit-norm hashed bag-of-words embedding.
std::vector<double> hashed_embedding(std::string_view text, std::size_t dimension = 64);

/// Deterministic pseudo logprobs for the tokens of a prompt (all < 0).
std::vector<double> pseudo_prompt_logprobs(std::string_view prompt);

}  // namespace rlvrdetect::stub
