#pragma once

// Samples completions from an OpenAI-compatible endpoint and caches each
// completion set on disk, keyed by model, prompt hash and config fingerprint.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rlvrdetect/corpus.hpp"
#include "rlvrdetect/error.hpp"
#include "rlvrdetect/http.hpp"

namespace rlvrdetect::sampler {

using corpus::CompletionSet;

enum class ApiMode { Completions, Chat };

std::string_view to_string(ApiMode mode) noexcept;
ApiMode parse_api_mode(std::string_view name);

struct SamplingConfig {
  std::string endpoint_url;
  std::string model_name;
  std::size_t n_samples = 32;
  double temperature = 0.7;
  double top_p = 0.95;
  std::size_t max_tokens = 1024;
  ApiMode api_mode = ApiMode::Completions;
  // "{prompt}" is replaced by the prompt text.
  std::string prompt_template = "{prompt}";
  std::optional<std::uint64_t> seed;
  // Per-completion and prompt token logprobs (needed by ppl / min-k-percent).
  bool request_logprobs = false;
  // Largest n sent in one request; 0 means n_samples.
  std::size_t max_n_per_request = 0;

  double request_timeout = 120.0;
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_backoff{500};
  std::size_t concurrency_limit = 4;
  std::string api_key_env = http::kDefaultApiKeyVariable;
  // Empty disables caching.
  std::filesystem::path cache_dir;
};

/// Hash over the fields that change what the endpoint returns. Timeouts,
/// retries, concurrency and cache location are excluded.
std::string config_fingerprint(const SamplingConfig& config);
std::string greedy_fingerprint(const SamplingConfig& config);

/// Thrown when fewer than n_samples completions could be obtained. The partial
/// record has already been persisted.
class PartialResult : public Error {
 public:
  PartialResult(CompletionSet record, const std::string& detail)
      : Error(Errc::PartialResult, detail), record_(std::move(record)) {}
  const CompletionSet& record() const noexcept { return record_; }

 private:
  CompletionSet record_;
};

/// Append-only JSONL cache, one directory per model. Stochastic sets live in
/// completions.jsonl and greedy outputs in greedy.jsonl. Partial records are
/// stored for auditing but never returned as hits.
class CompletionCache {
 public:
  explicit CompletionCache(std::filesystem::path root);

  bool enabled() const noexcept { return !root_.empty(); }

  /// Raw stored line for a complete set, if any.
  std::optional<std::string> find_set(const std::string& model, const std::string& prompt_hash,
                                      const std::string& fingerprint);
  void store_set(const CompletionSet& set);

  std::optional<std::string> find_greedy(const std::string& model, const std::string& prompt_hash,
                                         const std::string& fingerprint);
  void store_greedy(const std::string& model, const std::string& prompt_hash, const std::string& fingerprint,
                    const std::string& text);

  std::filesystem::path model_dir(const std::string& model) const;

 private:
  struct ModelIndex {
    std::unordered_map<std::string, std::string> sets;
    std::unordered_map<std::string, std::string> greedy;
  };
  ModelIndex& index_for(const std::string& model);

  std::filesystem::path root_;
  std::mutex mutex_;
  std::unordered_map<std::string, ModelIndex> models_;
};

class Sampler {
 public:
  explicit Sampler(SamplingConfig config);

  const SamplingConfig& config() const noexcept { return config_; }

  /// Cache hit returns the stored record without network IO. Throws
  /// EndpointError / AuthError when nothing could be sampled and PartialResult
  /// when some but not all completions arrived.
  CompletionSet sample_completions(const std::string& prompt_id, const std::string& prompt_text);

  /// One completion at temperature 0, cached separately.
  std::string greedy_completion(const std::string& prompt_id, const std::string& prompt_text);

  struct BatchOptions {
    bool with_greedy = false;
  };

  /// Samples every prompt with at most concurrency_limit prompts in flight.
  /// Output order matches input order; per-prompt failures become records with
  /// `partial = true` and `error` set.
  std::vector<CompletionSet> batch_sample(std::span<const corpus::PromptRecord> prompts,
                                          const BatchOptions& options);
  std::vector<CompletionSet> batch_sample(std::span<const corpus::PromptRecord> prompts) {
    return batch_sample(prompts, BatchOptions{});
  }

 private:
  struct Choice {
    std::string text;
    bool truncated = false;
    std::optional<std::vector<double>> logprobs;
  };

  std::vector<Choice> request_choices(const std::string& prompt_text, std::size_t n, double temperature,
                                      std::optional<std::uint64_t> seed, bool logprobs) const;
  std::optional<std::vector<double>> request_prompt_logprobs(const std::string& prompt_text) const;
  std::string render_prompt(const std::string& prompt_text) const;

  SamplingConfig config_;
  http::JsonClient client_;
  CompletionCache cache_;
  std::string fingerprint_;
  std::string greedy_fingerprint_;
};

}  // namespace rlvrdetect::sampler
