#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rlvrdetect/cli.hpp"
#include "rlvrdetect/corpus.hpp"
#include "rlvrdetect/stub_server.hpp"

using namespace rlvrdetect;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("rlvrdetect-cli-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_prompts(const std::string& path, std::size_t n, bool labeled = true) {
  std::vector<corpus::PromptRecord> prompts(n);
  for (std::size_t i = 0; i < n; ++i) {
    prompts[i].id = "p" + std::to_string(i);
    prompts[i].prompt = "Compute item " + std::to_string(i);
    if (labeled) prompts[i].label = i % 2 ? detector::Membership::NonMember : detector::Membership::Member;
  }
  corpus::save_jsonl(prompts, path);
}

}  // namespace

TEST_CASE("sample writes one set per prompt and resumes from the cache") {
  stub::StubServer server;
  server.start();
  TempDir dir;
  write_prompts(dir / "prompts.jsonl", 3);
  const std::vector<std::string> args{"sample",  "--prompts", dir / "prompts.jsonl", "--out",       dir / "c.jsonl",
                                      "--endpoint", server.url(), "--model",         "stub",      "--n",
                                      "4",       "--cache-dir", dir / "cache",       "--greedy"};
  const auto first = invoke(args);
  CHECK(first.code == 0);
  const auto sets = corpus::load_jsonl<corpus::CompletionSet>(dir / "c.jsonl");
  REQUIRE(sets.size() == 3);
  CHECK(sets[2].completions == std::vector<std::string>{"resp-0", "resp-1", "resp-2", "resp-3"});
  CHECK(sets[0].greedy == std::optional<std::string>("greedy-resp"));
  CHECK(fs::exists(dir / "c.jsonl.manifest.json"));

  server.reset_request_count();
  CHECK(invoke(args).code == 0);
  CHECK(server.request_count() == 0);
}

TEST_CASE("sample reports partial failures and bad endpoints") {
  stub::StubOptions options;
  options.fail_prompt_substrings = {"item 1"};
  stub::StubServer server(options);
  server.start();
  TempDir dir;
  write_prompts(dir / "prompts.jsonl", 3);
  const auto partial = invoke({"sample", "--prompts", dir / "prompts.jsonl", "--out", dir / "c.jsonl", "--endpoint",
                            server.url(), "--model", "stub", "--max-retries", "0", "--cache-dir", ""});
  CHECK(partial.code == 1);
  CHECK(partial.err.find("prompt p1") != std::string::npos);

  const auto bad = invoke({"sample", "--prompts", dir / "prompts.jsonl", "--out", dir / "c.jsonl", "--endpoint",
                        "ftp//nowhere", "--model", "stub"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("InvalidConfig") != std::string::npos);

  CHECK(invoke({"sample", "--prompts", dir / "prompts.jsonl"}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("score, eval and analyze over the synthetic benchmark") {
  TempDir dir;
  REQUIRE(invoke({"synth", "--prompts-out", dir / "p.jsonl", "--out", dir / "c.jsonl", "--members", "6", "--nonmembers",
               "6", "--n", "12"})
              .code == 0);

  const auto score = invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "s.jsonl", "--method",
                          "min-knn,ppl", "--k", "10"});
  REQUIRE(score.code == 0);
  const auto scores = corpus::load_jsonl<corpus::ScoreRecord>(dir / "s.jsonl");
  REQUIRE(scores.size() == 24);
  CHECK(scores[0].prompt_id == "seen-0000");
  CHECK(scores[0].method == "min-knn");
  CHECK(scores[0].score < 0.06);
  CHECK(scores[0].k_used == std::optional<std::size_t>(10));
  CHECK(scores[0].m_used == 12);
  CHECK(scores[1].method == "ppl");

  CHECK(invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "x.jsonl", "--k", "13"}).code == 2);
  const auto too_large = invoke({"score", "--completions", dir / "missing.jsonl", "--out", dir / "x.jsonl", "--k", "9",
                              "--n", "8"});
  CHECK(too_large.code == 2);
  CHECK(too_large.err.find("KTooLarge") != std::string::npos);
  const auto no_greedy = invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "x.jsonl", "--method", "cdd"});
  CHECK(no_greedy.code == 2);
  CHECK(no_greedy.err.find("MissingGreedy") != std::string::npos);
  CHECK(no_greedy.err.find("unseen-0005") != std::string::npos);

  const auto eval = invoke({"eval", "--scores", dir / "s.jsonl", "--prompts", dir / "p.jsonl", "--out", dir / "r.json",
                         "--method", "min-knn,cdd", "--dual-stage", "0.3,0.5", "--seed", "4"});
  REQUIRE(eval.code == 0);
  CHECK(eval.out.find("min-knn") != std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "r.json"));
  CHECK(report["full"][0]["method"] == "min-knn");
  CHECK(report["full"][0]["auc"] == 1.0);
  CHECK(report["full"].back()["status"] == "unavailable");
  REQUIRE(report["dual_stage"].size() == 2);
  CHECK(report["dual_stage"][0]["subset_size"] == 4);
  CHECK(report["dual_stage"][0]["random-control"]["prompt_ids"].size() == 4);
  const auto first_report = slurp(dir / "r.json");
  CHECK(invoke({"eval", "--scores", dir / "s.jsonl", "--prompts", dir / "p.jsonl", "--out", dir / "r.json", "--method",
             "min-knn,cdd", "--dual-stage", "0.3,0.5", "--seed", "4"})
            .code == 0);
  CHECK(slurp(dir / "r.json") == first_report);

  const auto analyze =
      invoke({"analyze", "--completions", dir / "c.jsonl", "--out", dir / "prof.jsonl", "--heatmap", dir / "heat"});
  CHECK(analyze.code == 0);
  CHECK(analyze.err.find("notice") != std::string::npos);
  const auto lines = corpus::read_jsonl(dir / "prof.jsonl");
  REQUIRE(lines.size() == 24);
  CHECK(lines[0].value["kind"] == "diversity");
  CHECK(lines[0].value["nli_diversity"].is_null());
  CHECK(lines[1].value["kind"] == "rigidity");
  CHECK(lines[1].value["cluster_count"].get<int>() >= 1);
  std::size_t csvs = 0;
  for (const auto& entry : fs::directory_iterator(dir.path / "heat")) csvs += entry.path().extension() == ".csv";
  CHECK(csvs == 12);
}

TEST_CASE("eval input errors") {
  TempDir dir;
  REQUIRE(invoke({"synth", "--prompts-out", dir / "p.jsonl", "--out", dir / "c.jsonl", "--members", "3", "--nonmembers",
               "0", "--n", "4"})
              .code == 0);
  REQUIRE(invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "s.jsonl", "--k", "2"}).code == 0);
  const auto empty_class = invoke({"eval", "--scores", dir / "s.jsonl", "--prompts", dir / "p.jsonl", "--out", dir / "r"});
  CHECK(empty_class.code == 2);
  CHECK(empty_class.err.find("EmptyClass") != std::string::npos);

  write_prompts(dir / "unlabeled.jsonl", 2, false);
  corpus::ScoreRecord r;
  r.prompt_id = "p1";
  r.method = "min-knn";
  corpus::save_jsonl(std::vector<corpus::ScoreRecord>{r}, dir / "s2.jsonl");
  const auto unlabeled =
      invoke({"eval", "--scores", dir / "s2.jsonl", "--prompts", dir / "unlabeled.jsonl", "--out", dir / "r"});
  CHECK(unlabeled.code == 2);
  CHECK(unlabeled.err.find("p1") != std::string::npos);
}

TEST_CASE("analyze with stub providers") {
  stub::StubServer server;
  server.start();
  TempDir dir;
  REQUIRE(invoke({"synth", "--prompts-out", dir / "p.jsonl", "--out", dir / "c.jsonl", "--members", "2", "--nonmembers",
               "1", "--n", "6"})
              .code == 0);
  const auto run = invoke({"analyze", "--completions", dir / "c.jsonl", "--out", dir / "prof.jsonl", "--nli-endpoint",
                        server.url(), "--embedding-endpoint", server.url(), "--labeler-endpoint", server.url(),
                        "--cross-input", "--kind", "all"});
  CHECK(run.code == 0);
  const auto lines = corpus::read_jsonl(dir / "prof.jsonl");
  REQUIRE(lines.size() == 7);
  CHECK(lines[0].value["nli_diversity"].is_number());
  CHECK(lines[0].value["embedding_diversity"].is_number());
  CHECK(lines[1].value["cluster_features"] == "logic");
  CHECK(lines[6].value["prompt_id"] == "cross-input");

  stub::StubOptions failing;
  failing.fail_first = 1000;
  stub::StubServer down(failing);
  down.start();
  const auto degraded = invoke({"analyze", "--completions", dir / "c.jsonl", "--out", dir / "prof2.jsonl",
                             "--nli-endpoint", down.url(), "--max-retries", "0", "--kind", "diversity"});
  CHECK(degraded.code == 1);
  CHECK(corpus::read_jsonl(dir / "prof2.jsonl").size() == 3);
}

TEST_CASE("config files, sweeps and manifests") {
  TempDir dir;
  REQUIRE(invoke({"synth", "--prompts-out", dir / "p.jsonl", "--out", dir / "c.jsonl", "--members", "2", "--nonmembers",
               "2", "--n", "8"})
              .code == 0);
  std::ofstream(dir / "run.conf") << "# shared pipeline settings\nk = 3\nunit=char\nendpoint = http://unused\n";
  const auto pairs = cli::read_config_file(dir / "run.conf");
  CHECK(pairs.size() == 3);
  CHECK(pairs[0] == std::pair<std::string, std::string>{"k", "3"});

  REQUIRE(invoke({"score", "--config", dir / "run.conf", "--completions", dir / "c.jsonl", "--out", dir / "s.jsonl"})
              .code == 0);
  auto scores = corpus::load_jsonl<corpus::ScoreRecord>(dir / "s.jsonl");
  CHECK(scores[0].k_used == std::optional<std::size_t>(3));
  const auto manifest = nlohmann::json::parse(slurp(dir / "s.jsonl.manifest.json"));
  CHECK(manifest["config"]["k"] == "3");
  CHECK(manifest["config"]["unit"] == "char");
  CHECK(manifest["inputs"].contains(dir / "c.jsonl"));
  CHECK(manifest["command"] == "score");

  // Command-line flags win over the file.
  REQUIRE(invoke({"score", "--config", dir / "run.conf", "--k", "5", "--completions", dir / "c.jsonl", "--out",
               dir / "s.jsonl"})
              .code == 0);
  scores = corpus::load_jsonl<corpus::ScoreRecord>(dir / "s.jsonl");
  CHECK(scores[0].k_used == std::optional<std::size_t>(5));

  std::ofstream(dir / "bad.conf") << "no_such_key = 1\n";
  CHECK(invoke({"score", "--config", dir / "bad.conf", "--completions", dir / "c.jsonl", "--out", dir / "s.jsonl"})
            .code == 2);

  REQUIRE(invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "sw.jsonl", "--sweep", "k=2,4,8"}).code ==
          0);
  for (const char* k : {"2", "4", "8"}) {
    const auto path = cli::sweep_path(dir.path / "sw.jsonl", "k", k);
    CHECK(path.filename() == std::string("sw.k") + k + ".jsonl");
    REQUIRE(fs::exists(path));
    CHECK(corpus::load_jsonl<corpus::ScoreRecord>(path)[0].k_used == std::optional<std::size_t>(std::stoul(k)));
  }
  CHECK(invoke({"score", "--completions", dir / "c.jsonl", "--out", dir / "sw.jsonl", "--sweep", "temperature=1"})
            .code == 2);
}

TEST_CASE("sample sweeps over n") {
  stub::StubServer server;
  server.start();
  TempDir dir;
  write_prompts(dir / "prompts.jsonl", 2);
  REQUIRE(invoke({"sample", "--prompts", dir / "prompts.jsonl", "--out", dir / "c.jsonl", "--endpoint", server.url(),
               "--model", "stub", "--sweep", "n=2,3", "--cache-dir", dir / "cache"})
              .code == 0);
  CHECK(corpus::load_jsonl<corpus::CompletionSet>(dir / "c.n2.jsonl")[0].completions.size() == 2);
  CHECK(corpus::load_jsonl<corpus::CompletionSet>(dir / "c.n3.jsonl")[0].completions.size() == 3);
}
