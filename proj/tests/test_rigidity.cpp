#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "rlvrdetect/error.hpp"
#include "rlvrdetect/rigidity.hpp"
#include "rlvrdetect/stub_server.hpp"
#include "rlvrdetect/synthetic.hpp"

using namespace rlvrdetect;
using namespace rlvrdetect::rigidity;
namespace fs = std::filesystem;

namespace {

class ScriptedChat : public ChatClient {
 public:
  explicit ScriptedChat(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::string& message) override {
    last_message = message;
    ++calls;
    return replies_[std::min(calls - 1, replies_.size() - 1)];
  }
  std::string id() const override { return "scripted"; }
  std::string last_message;
  std::size_t calls = 0;

 private:
  std::vector<std::string> replies_;
};

class RuleChat : public ChatClient {
 public:
  std::string complete(const std::string& message) override { return stub::rule_based_label_reply(message); }
  std::string id() const override { return "rule"; }
};

// Canonical form of a partition, independent of label numbering.
std::set<std::set<std::size_t>> partition(const std::vector<std::size_t>& assignment) {
  std::map<std::size_t, std::set<std::size_t>> groups;
  for (std::size_t i = 0; i < assignment.size(); ++i) groups[assignment[i]].insert(i);
  std::set<std::set<std::size_t>> out;
  for (auto& [_, g] : groups) out.insert(g);
  return out;
}

}  // namespace

TEST_CASE("rigid n-gram extraction") {
  const std::vector<std::string> four{"a b c d", "a b c e", "x y z w", "a b q r"};
  const auto r = rigid_ngrams(four, {.n = 3, .min_fraction = 0.5, .min_count = std::nullopt});
  CHECK(r == std::map<std::string, std::size_t>{{"a b c", 2}});

  const std::vector<std::string> same(3, "p q r s");
  const auto all = rigid_ngrams(same);
  CHECK(all == std::map<std::string, std::size_t>{{"p q r", 3}, {"q r s", 3}});

  const std::vector<std::string> disjoint{"a b c", "d e f", "g h i"};
  CHECK(rigid_ngrams(disjoint).empty());

  // Presence is counted once per completion.
  const std::vector<std::string> repeats{"a b c a b c", "x y z"};
  CHECK(rigid_ngrams(repeats, {.n = 3, .min_fraction = 1.0, .min_count = std::nullopt}).empty());

  const auto by_count = rigid_ngrams(four, {.n = 2, .min_fraction = 0.5, .min_count = 3});
  CHECK(by_count == std::map<std::string, std::size_t>{{"a b", 3}});
  CHECK(support_threshold(4, {}) == 2);
  CHECK(support_threshold(5, {}) == 3);
  CHECK(support_threshold(10, {.n = 3, .min_fraction = 0.3, .min_count = std::nullopt}) == 3);
}

TEST_CASE("extraction is order invariant and anti-monotone in the threshold") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> texts;
    for (int i = 0; i < 8; ++i) {
      std::string t;
      for (int w = 0; w < 12; ++w) t += "w" + std::to_string(rng() % 5) + " ";
      texts.push_back(t);
    }
    auto shuffled = texts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(rigid_ngrams(texts) == rigid_ngrams(shuffled));
    std::size_t previous = SIZE_MAX;
    for (double f : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      const auto r = rigid_ngrams(texts, {.n = 3, .min_fraction = f, .min_count = std::nullopt});
      CHECK(r.size() <= previous);
      previous = r.size();
    }
  }
}

TEST_CASE("annotated answers and the labeling request") {
  const std::vector<std::string> grams{"x = 2", "so x"};
  CHECK(annotate_answer("so x = 2 done", grams) == "[so x = 2] done");
  CHECK(annotate_answer("a x = 2 b", grams) == "a [x = 2] b");
  CHECK(annotate_answer("nothing here", grams) == "nothing here");

  const auto req = labeling_request("Solve for x", "so x = 2 done", grams);
  CHECK(req["task"] == labeling_task_text());
  CHECK(req["problem"] == "Solve for x");
  CHECK(req["sample_answer"] == "[so x = 2] done");
  CHECK(req["ngrams"] == nlohmann::json(grams));
  CHECK(labeling_task_text().find("restatement, logic, boilerplate, other") != std::string::npos);
}

TEST_CASE("labeling replies") {
  const std::vector<std::string> grams{"x = 2", "we get", "let us"};
  ScriptedChat all_logic({R"({"x = 2":"logic","we get":"logic","let us":"logic"})"});
  const auto r = label_ngrams("p", "x = 2 we get let us", grams, all_logic);
  for (const auto& g : grams) CHECK(r.categories.at(g) == Category::Logic);
  CHECK(r.flagged.empty());
  CHECK(nlohmann::json::parse(all_logic.last_message)["ngrams"].size() == 3);

  ScriptedChat omitting({"```json\n{\"x = 2\": \"logic\", \"we get\": \"banana\"}\n```"});
  const auto o = label_ngrams("p", "a", grams, omitting);
  CHECK(o.categories.at("we get") == Category::Other);
  CHECK(o.categories.at("let us") == Category::Other);
  CHECK(o.flagged == std::vector<std::string>{"we get", "let us"});

  ScriptedChat garbage({"no json at all", "still nothing", R"({"x = 2":"logic"})"});
  CHECK(label_ngrams("p", "a", grams, garbage, 3).categories.at("x = 2") == Category::Logic);
  CHECK(garbage.calls == 3);

  ScriptedChat hopeless({"nope"});
  try {
    label_ngrams("p", "a", grams, hopeless, 2);
    FAIL("expected LabelerError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::LabelerError);
  }
}

TEST_CASE("rule-based labeler") {
  RuleChat rule;
  const std::vector<std::string> grams{"the integer n", "x + 1", "let us think", "Foo Bar baz"};
  const auto r = label_ngrams("Find the integer n such that", "answer", grams, rule);
  CHECK(r.categories.at("the integer n") == Category::Restatement);
  CHECK(r.categories.at("x + 1") == Category::Logic);
  CHECK(r.categories.at("let us think") == Category::Boilerplate);
  CHECK(r.categories.at("Foo Bar baz") == Category::Other);
  CHECK(label_ngrams("Find the integer n such that", "answer", grams, rule).categories == r.categories);
}

TEST_CASE("structure clustering examples") {
  const std::vector<std::string> logic{"g1 a", "g1 b", "g2 a", "g2 b"};
  const std::vector<std::string> two_groups{"g1 a g1 b", "g2 a g2 b", "x g1 a y g1 b", "g2 a z g2 b"};
  const auto r = structure_clusters(two_groups, logic);
  CHECK(r.cluster_count == 2);
  CHECK(r.assignment == std::vector<std::size_t>{0, 1, 0, 1});
  CHECK_FALSE(r.degenerate);

  const std::vector<std::string> shared(5, "g1 a and g1 b");
  CHECK(structure_clusters(shared, logic).cluster_count == 1);
  const std::vector<std::string> single{"g2 a"};
  CHECK(structure_clusters(single, logic).cluster_count == 1);

  const auto none = structure_clusters(two_groups, std::vector<std::string>{});
  CHECK(none.degenerate);
  CHECK(none.cluster_count == 4);
  CHECK(none.assignment == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("set distances") {
  const std::vector<bool> a{true, true, false, false};
  const std::vector<bool> b{true, false, true, false};
  CHECK(set_distance(a, b, SetMetric::Jaccard) == doctest::Approx(2.0 / 3.0));
  CHECK(set_distance(a, b, SetMetric::Hamming) == doctest::Approx(0.5));
  const std::vector<bool> empty(4, false);
  CHECK(set_distance(empty, empty, SetMetric::Jaccard) == 0.0);
  CHECK(set_distance(a, empty, SetMetric::Jaccard) == 1.0);
}

TEST_CASE("clustering invariants on random feature sets") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng() % 10;
    const std::size_t features = 1 + rng() % 6;
    std::vector<std::vector<bool>> rows(m, std::vector<bool>(features));
    for (auto& row : rows) {
      for (std::size_t f = 0; f < features; ++f) row[f] = rng() % 2;
    }
    for (auto linkage : {Linkage::Average, Linkage::Single, Linkage::Complete}) {
      const ClusterOptions options{.linkage = linkage, .metric = SetMetric::Jaccard, .threshold = 0.5};
      const auto base = cluster_presence(rows, options);
      // Labels are contiguous and numbered by first appearance.
      std::size_t next = 0;
      for (std::size_t label : base.assignment) {
        CHECK(label <= next);
        if (label == next) ++next;
      }
      CHECK(next == base.cluster_count);

      // Reordering completions gives the same partition.
      std::vector<std::size_t> perm(m);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::vector<bool>> permuted;
      for (std::size_t i : perm) permuted.push_back(rows[i]);
      const auto p = cluster_presence(permuted, options);
      std::vector<std::size_t> back(m);
      for (std::size_t i = 0; i < m; ++i) back[perm[i]] = p.assignment[i];
      CHECK(partition(back) == partition(base.assignment));

      // Collapsing two identical completions into one never adds clusters.
      auto with_dup = rows;
      with_dup.push_back(rows[rng() % m]);
      const auto dup = cluster_presence(with_dup, options);
      CHECK(base.cluster_count <= dup.cluster_count);
      CHECK(dup.assignment.back() == dup.assignment[std::find(with_dup.begin(), with_dup.end(), with_dup.back()) -
                                                    with_dup.begin()]);
    }
  }
}

TEST_CASE("histograms") {
  const std::vector<std::size_t> counts{2, 3, 5};
  const auto h = cluster_histogram(counts);
  CHECK(h.prompts == 3);
  REQUIRE(h.cumulative.size() == 4);
  CHECK(h.cumulative[0].second == doctest::Approx(1.0 / 3.0));
  CHECK(h.cumulative[1].second == doctest::Approx(2.0 / 3.0));
  CHECK(h.cumulative[2].second == 1.0);
  CHECK(h.cumulative[3].second == 1.0);
  CHECK(h.counts.at(3) == 1);

  const std::vector<std::size_t> twos(49, 2);
  CHECK(cluster_histogram(twos).cumulative[0].second == 1.0);

  try {
    cluster_histogram(std::vector<std::size_t>{});
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyInput);
  }
}

TEST_CASE("profiles and heatmap export") {
  const auto trial = synthetic::generate_cluster_trial(3, 16, 5);
  RuleChat rule;
  RigidityOptions options;
  options.extraction.min_fraction = 0.1;
  const auto p = build_profile("p0", "Problem text", trial.completions, options, &rule);
  CHECK(p.cluster_features == "logic");
  CHECK(p.cluster_count == 3);
  for (const auto& [gram, support] : p.rigid_ngrams) CHECK(support >= support_threshold(16, options.extraction));
  for (const auto& [gram, category] : p.categories) CHECK(p.rigid_ngrams.count(gram) == 1);

  nlohmann::json j = p;
  CHECK(j["kind"] == "rigidity");
  const auto back = j.get<RigidityProfile>();
  CHECK(back.cluster_assignment == p.cluster_assignment);
  CHECK(back.categories == p.categories);

  const auto offline = build_profile("p0", "Problem text", trial.completions, options, nullptr);
  CHECK(offline.cluster_features == "all-rigid");
  CHECK(offline.categories.empty());

  const fs::path csv = fs::temp_directory_path() / "rlvrdetect-heatmap-test.csv";
  write_co_occurrence_csv(p, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("ngram,category,c0,", 0) == 0);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == p.co_occurrence_ngrams.size());
  fs::remove(csv);
}
