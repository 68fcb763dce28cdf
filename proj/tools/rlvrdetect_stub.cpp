// Standalone deterministic endpoint for offline runs and demos.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "rlvrdetect/corpus.hpp"
#include "rlvrdetect/stub_server.hpp"

int main(int argc, char** argv) {
  using namespace rlvrdetect;
  CLI::App app{"Deterministic OpenAI-compatible stub server", "rlvrdetect-stub"};
  std::string host = "127.0.0.1";
  int port = 8089;
  std::string mode = "echo";
  std::string seen;
  std::string api_key_env;
  stub::StubOptions options;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--mode", mode, "echo or synthetic")->check(CLI::IsMember({"echo", "synthetic"}));
  app.add_option("--seen", seen, "prompts.jsonl; prompts labeled member get collapsed completions");
  app.add_option("--max-n", options.max_n, "cap on choices per request");
  app.add_option("--fail-first", options.fail_first, "fail this many initial requests");
  app.add_option("--fail-status", options.fail_status);
  app.add_option("--fail-prompt", options.fail_prompt_substrings, "always fail prompts containing this text");
  app.add_option("--require-key-env", api_key_env, "require the key held in this environment variable");
  CLI11_PARSE(app, argc, argv);

  options.mode = mode == "synthetic" ? stub::Mode::Synthetic : stub::Mode::Echo;
  try {
    if (!seen.empty()) {
      for (const auto& p : corpus::load_jsonl<corpus::PromptRecord>(seen)) {
        if (p.label == detector::Membership::Member) options.seen_prompts.insert(p.prompt);
      }
    }
    if (!api_key_env.empty()) {
      const char* key = std::getenv(api_key_env.c_str());
      if (!key) {
        std::cerr << "error: " << api_key_env << " is not set\n";
        return 2;
      }
      options.api_key = key;
    }
    stub::StubServer server(options);
    std::cerr << "listening on http://" << host << ":" << port << '\n';
    server.serve_forever(host, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
