#include "rlvrdetect/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "rlvrdetect/hash.hpp"

namespace rlvrdetect::sampler {

namespace {

using Json = nlohmann::json;

std::string cache_key(const std::string& prompt_hash, const std::string& fingerprint) {
  return prompt_hash + "|" + fingerprint;
}

std::string fingerprint_of(const SamplingConfig& c, std::string_view kind, std::size_t n, double temperature,
                           bool logprobs) {
  Json j{{"kind", kind},
         {"model", c.model_name},
         {"n", n},
         {"temperature", temperature},
         {"top_p", c.top_p},
         {"max_tokens", c.max_tokens},
         {"api_mode", to_string(c.api_mode)},
         {"prompt_template", c.prompt_template},
         {"logprobs", logprobs}};
  j["seed"] = c.seed ? Json(*c.seed) : Json(nullptr);
  return sha256_hex(j.dump());
}

// Filesystem-safe directory name for a model id such as "org/model-7b".
std::string sanitize(const std::string& model) {
  std::string out;
  for (char c : model) {
    const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '_' || c == '.';
    out.push_back(safe ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

std::vector<double> read_token_logprobs(const Json& logprobs) {
  std::vector<double> out;
  if (auto it = logprobs.find("token_logprobs"); it != logprobs.end() && it->is_array()) {
    for (const auto& v : *it) {
      if (v.is_number()) out.push_back(v.get<double>());
    }
  } else if (auto content = logprobs.find("content"); content != logprobs.end() && content->is_array()) {
    for (const auto& tok : *content) {
      if (auto lp = tok.find("logprob"); lp != tok.end() && lp->is_number()) out.push_back(lp->get<double>());
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(ApiMode mode) noexcept {
  return mode == ApiMode::Completions ? "completions" : "chat";
}

ApiMode parse_api_mode(std::string_view name) {
  if (name == "completions") return ApiMode::Completions;
  if (name == "chat") return ApiMode::Chat;
  throw Error(Errc::InvalidConfig, "unknown api mode '" + std::string(name) + "'");
}

std::string config_fingerprint(const SamplingConfig& config) {
  return fingerprint_of(config, "sample", config.n_samples, config.temperature, config.request_logprobs);
}

std::string greedy_fingerprint(const SamplingConfig& config) {
  return fingerprint_of(config, "greedy", 1, 0.0, false);
}

CompletionCache::CompletionCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path CompletionCache::model_dir(const std::string& model) const { return root_ / sanitize(model); }

CompletionCache::ModelIndex& CompletionCache::index_for(const std::string& model) {
  if (auto it = models_.find(model); it != models_.end()) return it->second;
  ModelIndex index;
  const auto dir = model_dir(model);
  if (std::filesystem::exists(dir / "completions.jsonl")) {
    for (const auto& [line, value] : corpus::read_jsonl(dir / "completions.jsonl")) {
      if (value.value("partial", false)) continue;
      const std::string hash = prompt_hash(value.value("prompt_text", std::string{}));
      index.sets[cache_key(hash, value.value("config_fingerprint", std::string{}))] = value.dump();
    }
  }
  if (std::filesystem::exists(dir / "greedy.jsonl")) {
    for (const auto& [line, value] : corpus::read_jsonl(dir / "greedy.jsonl")) {
      index.greedy[cache_key(value.at("prompt_hash").get<std::string>(),
                             value.at("config_fingerprint").get<std::string>())] = value.at("text").get<std::string>();
    }
  }
  return models_.emplace(model, std::move(index)).first->second;
}

std::optional<std::string> CompletionCache::find_set(const std::string& model, const std::string& prompt_hash,
                                                     const std::string& fingerprint) {
  if (!enabled()) return std::nullopt;
  std::scoped_lock lock(mutex_);
  auto& index = index_for(model);
  if (auto it = index.sets.find(cache_key(prompt_hash, fingerprint)); it != index.sets.end()) return it->second;
  return std::nullopt;
}

void CompletionCache::store_set(const CompletionSet& set) {
  if (!enabled()) return;
  const std::string line = corpus::to_jsonl_line(set);
  std::scoped_lock lock(mutex_);
  auto& index = index_for(set.model_name);
  corpus::append_jsonl(model_dir(set.model_name) / "completions.jsonl", line);
  if (!set.partial) index.sets[cache_key(prompt_hash(set.prompt_text), set.config_fingerprint)] = line;
}

std::optional<std::string> CompletionCache::find_greedy(const std::string& model, const std::string& prompt_hash,
                                                        const std::string& fingerprint) {
  if (!enabled()) return std::nullopt;
  std::scoped_lock lock(mutex_);
  auto& index = index_for(model);
  if (auto it = index.greedy.find(cache_key(prompt_hash, fingerprint)); it != index.greedy.end()) return it->second;
  return std::nullopt;
}

void CompletionCache::store_greedy(const std::string& model, const std::string& prompt_hash,
                                   const std::string& fingerprint, const std::string& text) {
  if (!enabled()) return;
  const Json record{{"schema", corpus::kSchemaVersion}, {"model_name", model},
                    {"prompt_hash", prompt_hash},       {"config_fingerprint", fingerprint},
                    {"text", text},                     {"created_at", corpus::utc_timestamp()}};
  std::scoped_lock lock(mutex_);
  auto& index = index_for(model);
  corpus::append_jsonl(model_dir(model) / "greedy.jsonl", record.dump());
  index.greedy[cache_key(prompt_hash, fingerprint)] = text;
}

Sampler::Sampler(SamplingConfig config)
    : config_(std::move(config)),
      client_(http::ClientOptions{.base_url = config_.endpoint_url,
                                  .timeout_seconds = config_.request_timeout,
                                  .retry = {.max_retries = config_.max_retries,
                                            .base_backoff = config_.base_backoff,
                                            .max_backoff = std::max(config_.base_backoff * 16,
                                                                    std::chrono::milliseconds(1))},
                                  .api_key = http::api_key_from_env(config_.api_key_env)}),
      cache_(config_.cache_dir),
      fingerprint_(config_fingerprint(config_)),
      greedy_fingerprint_(greedy_fingerprint(config_)) {
  if (config_.n_samples == 0) throw Error(Errc::InvalidConfig, "n_samples must be positive");
  if (config_.max_tokens == 0) throw Error(Errc::InvalidConfig, "max_tokens must be positive");
  if (!(config_.top_p > 0.0 && config_.top_p <= 1.0)) throw Error(Errc::InvalidConfig, "top_p must be in (0,1]");
  if (config_.temperature < 0.0) throw Error(Errc::InvalidConfig, "temperature must be >= 0");
  if (config_.concurrency_limit == 0) throw Error(Errc::InvalidConfig, "concurrency_limit must be positive");
}

std::string Sampler::render_prompt(const std::string& prompt_text) const {
  std::string out = config_.prompt_template;
  const std::string placeholder = "{prompt}";
  if (auto pos = out.find(placeholder); pos != std::string::npos) {
    out.replace(pos, placeholder.size(), prompt_text);
    return out;
  }
  return out + prompt_text;
}

std::vector<Sampler::Choice> Sampler::request_choices(const std::string& prompt_text, std::size_t n,
                                                      double temperature, std::optional<std::uint64_t> seed,
                                                      bool logprobs) const {
  Json body{{"model", config_.model_name},
            {"n", n},
            {"temperature", temperature},
            {"top_p", config_.top_p},
            {"max_tokens", config_.max_tokens}};
  if (seed) body["seed"] = *seed;
  std::string path;
  if (config_.api_mode == ApiMode::Completions) {
    path = "/v1/completions";
    body["prompt"] = render_prompt(prompt_text);
    if (logprobs) body["logprobs"] = 1;
  } else {
    path = "/v1/chat/completions";
    body["messages"] = Json::array({Json{{"role", "user"}, {"content", render_prompt(prompt_text)}}});
    if (logprobs) body["logprobs"] = true;
  }

  const Json response = client_.post(path, body);
  const auto choices_it = response.find("choices");
  if (choices_it == response.end() || !choices_it->is_array()) {
    throw EndpointError(200, "response from " + client_.base_url() + path + " has no choices array");
  }
  std::vector<Json> choices(choices_it->begin(), choices_it->end());
  std::stable_sort(choices.begin(), choices.end(),
                   [](const Json& a, const Json& b) { return a.value("index", 0) < b.value("index", 0); });

  std::vector<Choice> out;
  for (const auto& c : choices) {
    Choice choice;
    if (config_.api_mode == ApiMode::Completions) {
      choice.text = c.value("text", std::string{});
    } else if (auto msg = c.find("message"); msg != c.end() && msg->is_object()) {
      const auto content = msg->find("content");
      if (content != msg->end() && content->is_string()) choice.text = content->get<std::string>();
    }
    choice.truncated = c.value("finish_reason", Json(nullptr)) == "length";
    if (logprobs) {
      if (auto lp = c.find("logprobs"); lp != c.end() && lp->is_object()) choice.logprobs = read_token_logprobs(*lp);
    }
    out.push_back(std::move(choice));
  }
  return out;
}

std::optional<std::vector<double>> Sampler::request_prompt_logprobs(const std::string& prompt_text) const {
  if (config_.api_mode != ApiMode::Completions) return std::nullopt;
  const Json body{{"model", config_.model_name}, {"prompt", prompt_text}, {"max_tokens", 0},
                  {"echo", true},                {"logprobs", 1},         {"temperature", 0.0}};
  try {
    const Json response = client_.post("/v1/completions", body);
    const auto& choice = response.at("choices").at(0);
    auto values = read_token_logprobs(choice.at("logprobs"));
    if (values.empty()) return std::nullopt;
    return values;
  } catch (const EndpointError& e) {
    // Endpoints that cannot score prompts answer 4xx; logprob methods then
    // report unavailable. Server-side failures still propagate.
    if (e.status() >= 400 && e.status() < 500) return std::nullopt;
    throw;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

CompletionSet Sampler::sample_completions(const std::string& prompt_id, const std::string& prompt_text) {
  const std::string hash = prompt_hash(prompt_text);
  if (auto hit = cache_.find_set(config_.model_name, hash, fingerprint_)) {
    auto set = Json::parse(*hit).get<CompletionSet>();
    set.prompt_id = prompt_id;
    return set;
  }

  CompletionSet set;
  set.prompt_id = prompt_id;
  set.prompt_text = prompt_text;
  set.model_name = config_.model_name;
  set.config_fingerprint = fingerprint_;
  set.n_requested = config_.n_samples;
  if (config_.request_logprobs) set.logprobs.emplace();

  std::size_t per_request = config_.max_n_per_request == 0 ? config_.n_samples
                                                           : std::min(config_.max_n_per_request, config_.n_samples);
  std::uint64_t request_index = 0;
  try {
    while (set.completions.size() < config_.n_samples) {
      const std::size_t ask = std::min(per_request, config_.n_samples - set.completions.size());
      std::optional<std::uint64_t> seed;
      if (config_.seed) seed = *config_.seed + request_index;
      auto choices = request_choices(prompt_text, ask, config_.temperature, seed, config_.request_logprobs);
      ++request_index;
      if (choices.empty()) throw EndpointError(200, "endpoint returned zero choices");
      // The server capped n; keep asking in chunks of what it allows.
      if (choices.size() < ask) per_request = choices.size();
      const std::size_t take = std::min(choices.size(), config_.n_samples - set.completions.size());
      for (std::size_t i = 0; i < take; ++i) {
        set.completions.push_back(std::move(choices[i].text));
        set.truncated_flags.push_back(choices[i].truncated);
        if (set.logprobs) set.logprobs->push_back(choices[i].logprobs.value_or(std::vector<double>{}));
      }
    }
    if (config_.request_logprobs) set.prompt_logprobs = request_prompt_logprobs(prompt_text);
  } catch (const Error& e) {
    if (set.completions.empty()) throw;
    set.partial = true;
    set.error = e.what();
    set.created_at = corpus::utc_timestamp();
    cache_.store_set(set);
    throw PartialResult(set, prompt_id + ": got " + std::to_string(set.completions.size()) + " of " +
                                 std::to_string(config_.n_samples) + " completions (" + e.what() + ")");
  }

  set.created_at = corpus::utc_timestamp();
  cache_.store_set(set);
  return set;
}

std::string Sampler::greedy_completion(const std::string& /*prompt_id*/, const std::string& prompt_text) {
  const std::string hash = prompt_hash(prompt_text);
  if (auto hit = cache_.find_greedy(config_.model_name, hash, greedy_fingerprint_)) return *hit;
  auto choices = request_choices(prompt_text, 1, 0.0, config_.seed, false);
  if (choices.empty()) throw EndpointError(200, "endpoint returned zero choices for the greedy request");
  cache_.store_greedy(config_.model_name, hash, greedy_fingerprint_, choices.front().text);
  return choices.front().text;
}

std::vector<CompletionSet> Sampler::batch_sample(std::span<const corpus::PromptRecord> prompts,
                                                 const BatchOptions& options) {
  std::vector<CompletionSet> results(prompts.size());
  std::atomic<std::size_t> next{0};

  const auto sample_one = [&](std::size_t index) {
    const auto& prompt = prompts[index];
    CompletionSet set;
    try {
      set = sample_completions(prompt.id, prompt.prompt);
    } catch (const PartialResult& e) {
      results[index] = e.record();
      return;
    } catch (const Error& e) {
      set.prompt_id = prompt.id;
      set.prompt_text = prompt.prompt;
      set.model_name = config_.model_name;
      set.config_fingerprint = fingerprint_;
      set.n_requested = config_.n_samples;
      set.partial = true;
      set.error = e.what();
      set.created_at = corpus::utc_timestamp();
      cache_.store_set(set);
      results[index] = std::move(set);
      return;
    }
    if (options.with_greedy) {
      try {
        set.greedy = greedy_completion(prompt.id, prompt.prompt);
      } catch (const Error& e) {
        set.error = std::string("greedy: ") + e.what();
      }
    }
    results[index] = std::move(set);
  };

  const std::size_t workers = std::min(config_.concurrency_limit, prompts.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < prompts.size(); i = next++) sample_one(i);
      });
    }
  }
  return results;
}

}  // namespace rlvrdetect::sampler
