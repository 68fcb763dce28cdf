#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rlvrdetect/diversity.hpp"
#include "rlvrdetect/error.hpp"
#include "rlvrdetect/stub_server.hpp"

using namespace rlvrdetect;
using namespace rlvrdetect::diversity;

namespace {

class FixedNli : public NliProvider {
 public:
  explicit FixedNli(NliLabel label) : label_(label) {}
  NliLabel judge(const std::string&, const std::string&) override {
    ++calls;
    return label_;
  }
  std::string id() const override { return "fixed"; }
  std::size_t calls = 0;

 private:
  NliLabel label_;
};

class FirstTokenNli : public NliProvider {
 public:
  NliLabel judge(const std::string& p, const std::string& h) override {
    return tokenize(p).front() == tokenize(h).front() ? NliLabel::Entailment : NliLabel::Neutral;
  }
  std::string id() const override { return "first-token"; }
};

class FailingNli : public NliProvider {
 public:
  NliLabel judge(const std::string&, const std::string&) override { throw Error(Errc::EndpointError, "down"); }
  std::string id() const override { return "failing"; }
};

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidConfig;
}

}  // namespace

TEST_CASE("n-gram extraction") {
  const std::vector<std::string> abc{"a", "b", "c"};
  CHECK(extract_ngrams(abc, 2) == std::vector<Ngram>{{"a", "b"}, {"b", "c"}});
  CHECK(extract_ngrams(abc, 4).empty());
  const std::vector<std::string> aaa{"a", "a", "a"};
  CHECK(extract_ngrams(aaa, 1) == std::vector<Ngram>{{"a"}, {"a"}, {"a"}});
  CHECK(tokenize("  x\ty \n z ") == std::vector<std::string>{"x", "y", "z"});
}

TEST_CASE("EAD closed-form examples") {
  const std::vector<std::string> four_a{"a a a a"};
  CHECK(std::abs(ead_distinct_n(four_a, 1, 2.0) - 1.0 / 1.875) <= 1e-12);
  CHECK(std::abs(ead_distinct_n(four_a, 1, 2.0) - oracle::ead(1, 4, 2)) <= 1e-12);

  for (double v : {1.0, 2.0, 50.0, 1e6}) {
    CHECK(std::abs(ead_from_counts(1, 1, v) - 1.0) <= 1e-9);
  }

  const std::vector<std::string> same{"a b c d", "a b c d"};
  const std::vector<std::string> disjoint{"a b c d", "e f g h"};
  const double s = ead_distinct_n(same, 2, 100.0);
  const double d = ead_distinct_n(disjoint, 2, 100.0);
  CHECK(std::abs(s - d / 2.0) <= 1e-12);

  CHECK(code_of([] { ead_distinct_n(std::vector<std::string>{"a b"}, 3, 10.0); }) == Errc::NoNgrams);
}

TEST_CASE("EAD is stable for huge vocabularies") {
  // 1 - (1 - 1/V)^C loses all precision when computed naively for V ~ 1e12.
  const double v = 1e12;
  const double expected_limit = 5.0 / 5.0;
  CHECK(std::abs(ead_from_counts(5, 5, v) - expected_limit) <= 1e-6);
}

TEST_CASE("EAD average exclusions and ordering") {
  const std::vector<std::string> singles{"a", "b", "c"};
  const auto r = ead_average(singles);
  CHECK(r.excluded_n == std::vector<std::size_t>{2, 3, 4, 5});
  REQUIRE(r.by_n.size() == 5);
  CHECK(r.by_n.at(1).has_value());
  CHECK_FALSE(r.by_n.at(2).has_value());
  CHECK(r.mean == *r.by_n.at(1));

  CHECK(code_of([] { ead_average(std::vector<std::string>{}); }) == Errc::NoNgrams);

  const std::vector<std::string> identical{"p q r s t", "p q r s t", "p q r s t"};
  const std::vector<std::string> distinct{"p q r s t", "u v w x y", "k l m n o"};
  EadOptions fixed{.fixed_vocab_size = 1000.0, .pool_vocab_sizes = {}};
  CHECK(ead_average(identical, fixed).mean < ead_average(distinct, fixed).mean);

  auto reversed = distinct;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(ead_average(reversed).mean == ead_average(distinct).mean);
  CHECK(ead_average(distinct).mean > 0.0);
}

TEST_CASE("pool vocabulary sizes") {
  const std::vector<std::string> pool{"a b", "b c"};
  const auto v = pool_vocabulary_sizes(pool);
  CHECK(v.at(1) == 3.0);
  CHECK(v.at(2) == 2.0);
  CHECK(v.count(3) == 0);
}

TEST_CASE("embedding diversity") {
  const std::vector<std::vector<double>> same{{1, 0}, {1, 0}, {1, 0}};
  CHECK(embedding_diversity(same) == 0.0);
  const std::vector<std::vector<double>> ortho{{1, 0}, {0, 1}};
  CHECK(embedding_diversity(ortho) == doctest::Approx(1.0));
  // Pairwise cosines {1, 0, 0}.
  const std::vector<std::vector<double>> three{{1, 0}, {1, 0}, {0, 1}};
  CHECK(embedding_diversity(three) == doctest::Approx(2.0 / 3.0));

  // Invariant under a shared rotation.
  const double t = 0.7;
  std::vector<std::vector<double>> vecs{{0.6, 0.8}, {1, 0}, {0, -1}, {-0.28, 0.96}};
  auto rotated = vecs;
  for (auto& v : rotated) v = {std::cos(t) * v[0] - std::sin(t) * v[1], std::sin(t) * v[0] + std::cos(t) * v[1]};
  CHECK(embedding_diversity(rotated) == doctest::Approx(embedding_diversity(vecs)).epsilon(1e-12));

  CHECK(code_of([] { embedding_diversity(std::vector<std::vector<double>>{{1, 0}}); }) == Errc::TooFewEmbeddings);
  CHECK(code_of([] { embedding_diversity(std::vector<std::vector<double>>{{1, 0}, {1, 0, 0}}); }) ==
        Errc::DimensionMismatch);
}

TEST_CASE("NLI diversity") {
  const std::vector<std::string> four{"x one", "x two", "y three", "y four"};
  FixedNli neutral(NliLabel::Neutral);
  CHECK(nli_diversity(four, neutral).diversity == 0.0);
  FixedNli entail(NliLabel::Entailment);
  const auto all = nli_diversity(four, entail);
  CHECK(all.diversity == 1.0);
  CHECK(all.pair_count == 6);
  CHECK(entail.calls == 6);

  // Four completions with 3 of 6 pairs sharing a first token.
  const std::vector<std::string> crafted{"a p", "a q", "a r", "b s"};
  FirstTokenNli rule;
  CHECK(nli_diversity(crafted, rule).diversity == 0.5);

  FixedNli contra(NliLabel::Contradiction);
  CHECK(nli_diversity(four, contra).diversity == 1.0);

  const std::vector<std::string> one{"solo"};
  CHECK(code_of([&] { nli_diversity(one, neutral); }) == Errc::TooFewCompletions);
  FailingNli failing;
  CHECK(code_of([&] { nli_diversity(four, failing); }) == Errc::ProviderError);
}

TEST_CASE("pair sampling is seeded and bounded") {
  const auto a = sample_pairs(20, 64, 3);
  CHECK(a.size() == 64);
  CHECK(a == sample_pairs(20, 64, 3));
  CHECK(a != sample_pairs(20, 64, 4));
  CHECK(std::is_sorted(a.begin(), a.end()));
  for (const auto& [i, j] : a) CHECK(i < j);
  CHECK(sample_pairs(4, 64, 0).size() == 6);
}

TEST_CASE("profiles: offline, cross-input consistency and stub providers") {
  const std::vector<std::string> texts{"the answer is 4", "the answer is 5", "so x = 2"};
  ProfileOptions offline;
  const auto p = compute_profile("p", texts, offline);
  CHECK_FALSE(p.nli_diversity.has_value());
  CHECK_FALSE(p.embedding_diversity.has_value());
  CHECK(p.ead_by_n.size() == 5);
  CHECK(p.completion_count == 3);

  // Pooling the completions of a single prompt reproduces the per-input profile.
  const auto cross = compute_profile(kCrossInputId, texts, offline);
  CHECK(cross.ead == p.ead);
  CHECK(cross.ead_by_n == p.ead_by_n);

  nlohmann::json j = p;
  CHECK(j["kind"] == "diversity");
  CHECK(j["nli_diversity"].is_null());
  CHECK(j.get<DiversityProfile>().ead == p.ead);

  stub::StubServer server;
  server.start();
  http::ClientOptions client{.base_url = server.url()};
  HttpNliProvider nli(client);
  HttpEmbeddingProvider embed(client, "embed-small");
  ProfileOptions online;
  online.nli_provider = &nli;
  online.embedding_provider = &embed;
  const auto full = compute_profile("p", texts, online);
  REQUIRE(full.nli_diversity.has_value());
  CHECK(*full.nli_diversity == doctest::Approx(1.0 / 3.0));
  REQUIRE(full.embedding_diversity.has_value());
  CHECK(*full.embedding_diversity >= 0.0);
  CHECK(*full.embedding_diversity <= 2.0);
  CHECK(full.provider_ids.size() == 2);
  CHECK(compute_profile("p", texts, online).nli_diversity == full.nli_diversity);
}
