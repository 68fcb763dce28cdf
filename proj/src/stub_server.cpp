#include "rlvrdetect/stub_server.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "rlvrdetect/distance.hpp"
#include "rlvrdetect/hash.hpp"

namespace rlvrdetect::stub {

namespace {

using Json = nlohmann::json;

std::uint64_t hash64(std::string_view text) {
  // FNV-1a; stable across platforms.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool is_lower_word(std::string_view token) {
  if (token.empty()) return false;
  for (unsigned char c : token) {
    if (!(std::islower(c) || c == '\'')) return false;
  }
  return true;
}

bool has_logic_char(std::string_view gram) {
  for (unsigned char c : gram) {
    if (std::isdigit(c) || std::string_view("=+-*/^<>").find(static_cast<char>(c)) != std::string_view::npos) {
      return true;
    }
  }
  return false;
}

void reply_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

std::string rule_based_label_reply(const std::string& request_content) {
  const Json request = Json::parse(request_content);
  const std::string problem = distance::normalize_whitespace(request.value("problem", std::string{}));
  Json labels = Json::object();
  for (const auto& g : request.at("ngrams")) {
    const std::string gram = g.get<std::string>();
    const std::string norm = distance::normalize_whitespace(gram);
    std::string label = "other";
    if (!norm.empty() && problem.find(norm) != std::string::npos) {
      label = "restatement";
    } else if (has_logic_char(gram)) {
      label = "logic";
    } else {
      const auto tokens = distance::split_tokens(gram);
      bool all_words = !tokens.empty();
      for (auto t : tokens) all_words = all_words && is_lower_word(t);
      if (all_words) label = "boilerplate";
    }
    labels[gram] = label;
  }
  return labels.dump();
}

std::vector<double> hashed_embedding(std::string_view text, std::size_t dimension) {
  std::vector<double> v(dimension, 0.0);
  for (auto token : distance::split_tokens(text)) {
    const std::uint64_t h = hash64(token);
    v[h % dimension] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[0] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> pseudo_prompt_logprobs(std::string_view prompt) {
  std::vector<double> out;
  for (auto token : distance::split_tokens(prompt)) {
    out.push_back(-0.05 - static_cast<double>(hash64(token) % 1000) / 250.0);
  }
  if (out.empty()) out.push_back(-1.0);
  return out;
}

StubServer::StubServer(StubOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

StubServer::~StubServer() { stop(); }

std::string StubServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void StubServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw std::runtime_error("stub server cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void StubServer::serve_forever(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) throw std::runtime_error("stub server cannot listen on " + url());
}

void StubServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void StubServer::install_routes() {
  // Shared gate: counting, auth and fault injection. Returns false if it replied.
  auto admit = [this](const httplib::Request& req, httplib::Response& res, const std::string& prompt) {
    const std::size_t index = ++requests_;
    if (options_.api_key && req.get_header_value("Authorization") != "Bearer " + *options_.api_key) {
      reply_json(res, {{"error", "unauthorized"}}, 401);
      return false;
    }
    if (index <= options_.fail_first) {
      reply_json(res, {{"error", "injected failure"}}, options_.fail_status);
      return false;
    }
    for (const auto& marker : options_.fail_prompt_substrings) {
      if (!marker.empty() && prompt.find(marker) != std::string::npos) {
        reply_json(res, {{"error", "injected persistent failure"}}, 500);
        return false;
      }
    }
    return true;
  };

  auto generate = [this](const std::string& prompt, std::size_t n, double temperature,
                         std::uint64_t seed) -> std::vector<std::string> {
    if (options_.max_n > 0) n = std::min(n, options_.max_n);
    std::vector<std::string> texts;
    if (options_.mode == Mode::Echo) {
      if (temperature == 0.0) return {"greedy-resp"};
      for (std::size_t i = 0; i < n; ++i) texts.push_back("resp-" + std::to_string(i));
      return texts;
    }
    const bool member = options_.seen_prompts.contains(prompt);
    if (temperature == 0.0) return synthetic::completions_for_prompt(prompt, member, 1, 0, options_.synthetic);
    return synthetic::completions_for_prompt(prompt, member, n, seed + 1, options_.synthetic);
  };

  server_->Post("/v1/completions", [=](const httplib::Request& req, httplib::Response& res) {
    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::parse_error&) {
      reply_json(res, {{"error", "bad json"}}, 400);
      return;
    }
    const std::string prompt = body.value("prompt", std::string{});
    if (!admit(req, res, prompt)) return;
    if (body.value("echo", false)) {
      if (!options_.score_prompts) {
        reply_json(res, {{"error", "echo not supported"}}, 400);
        return;
      }
      Json lp = Json::array();
      lp.push_back(nullptr);  // first prompt token has no conditional logprob
      for (double v : pseudo_prompt_logprobs(prompt)) lp.push_back(v);
      reply_json(res, {{"choices", Json::array({Json{{"index", 0},
                                                     {"text", prompt},
                                                     {"logprobs", {{"token_logprobs", lp}}},
                                                     {"finish_reason", "length"}}})}});
      return;
    }
    const auto texts = generate(prompt, body.value("n", std::size_t{1}), body.value("temperature", 1.0),
                                body.value("seed", std::uint64_t{0}));
    const bool want_logprobs = body.contains("logprobs") && !body["logprobs"].is_null();
    Json choices = Json::array();
    for (std::size_t i = 0; i < texts.size(); ++i) {
      Json c{{"index", i}, {"text", texts[i]}, {"finish_reason", "stop"}};
      if (want_logprobs) {
        std::vector<double> lps(distance::split_tokens(texts[i]).size(), -0.25);
        c["logprobs"] = {{"token_logprobs", lps}};
      }
      choices.push_back(std::move(c));
    }
    reply_json(res, {{"object", "text_completion"}, {"model", body.value("model", "")}, {"choices", choices}});
  });

  server_->Post("/v1/chat/completions", [=](const httplib::Request& req, httplib::Response& res) {
    Json body;
    std::string content;
    try {
      body = Json::parse(req.body);
      content = body.at("messages").back().at("content").get<std::string>();
    } catch (const Json::exception&) {
      reply_json(res, {{"error", "bad request"}}, 400);
      return;
    }
    if (!admit(req, res, content)) return;
    Json choices = Json::array();
    const Json maybe_task = Json::parse(content, nullptr, false);
    if (maybe_task.is_object() && maybe_task.contains("task") && maybe_task.contains("ngrams")) {
      choices.push_back({{"index", 0},
                         {"message", {{"role", "assistant"}, {"content", rule_based_label_reply(content)}}},
                         {"finish_reason", "stop"}});
    } else {
      const auto texts = generate(content, body.value("n", std::size_t{1}), body.value("temperature", 1.0),
                                  body.value("seed", std::uint64_t{0}));
      for (std::size_t i = 0; i < texts.size(); ++i) {
        choices.push_back({{"index", i},
                           {"message", {{"role", "assistant"}, {"content", texts[i]}}},
                           {"finish_reason", "stop"}});
      }
    }
    reply_json(res, {{"object", "chat.completion"}, {"choices", choices}});
  });

  server_->Post("/v1/embeddings", [=](const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (!body.is_object()) {
      reply_json(res, {{"error", "bad json"}}, 400);
      return;
    }
    if (!admit(req, res, "")) return;
    std::vector<std::string> inputs;
    if (body["input"].is_string()) {
      inputs.push_back(body["input"].get<std::string>());
    } else {
      inputs = body.value("input", std::vector<std::string>{});
    }
    Json data = Json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", hashed_embedding(inputs[i])}});
    }
    reply_json(res, {{"object", "list"}, {"data", data}});
  });

  server_->Post("/v1/nli", [=](const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (!body.is_object()) {
      reply_json(res, {{"error", "bad json"}}, 400);
      return;
    }
    if (!admit(req, res, "")) return;
    const auto premise = distance::split_tokens(body.value("premise", std::string{}));
    const auto hypothesis = distance::split_tokens(body.value("hypothesis", std::string{}));
    const bool same_start = !premise.empty() && !hypothesis.empty() && premise.front() == hypothesis.front();
    reply_json(res, {{"label", same_start ? "entailment" : "neutral"}});
  });
}

}  // namespace rlvrdetect::stub
