#include "rlvrdetect/diversity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "rlvrdetect/distance.hpp"
#include "rlvrdetect/error.hpp"
#include "rlvrdetect/random.hpp"

namespace rlvrdetect::diversity {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (std::string_view t : distance::split_tokens(text)) out.emplace_back(t);
  return out;
}

std::vector<Ngram> extract_ngrams(std::span<const std::string> tokens, std::size_t n) {
  if (n == 0) throw Error(Errc::InvalidConfig, "n-gram order must be >= 1");
  std::vector<Ngram> out;
  if (tokens.size() < n) return out;
  out.reserve(tokens.size() - n + 1);
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) out.emplace_back(tokens.begin() + i, tokens.begin() + i + n);
  return out;
}

std::string join_ngram(std::span<const std::string> ngram) {
  std::string out;
  for (std::size_t i = 0; i < ngram.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += ngram[i];
  }
  return out;
}

NgramCounts pooled_ngram_counts(std::span<const std::string> completions, std::size_t n) {
  NgramCounts counts;
  std::unordered_set<std::string> distinct;
  for (const auto& completion : completions) {
    const auto tokens = tokenize(completion);
    for (const auto& gram : extract_ngrams(tokens, n)) {
      ++counts.total;
      distinct.insert(join_ngram(gram));
    }
  }
  counts.distinct = distinct.size();
  return counts;
}

double ead_from_counts(std::size_t distinct, std::size_t total, double vocab_size) {
  if (total == 0) throw Error(Errc::NoNgrams, "no n-grams to score");
  if (!(vocab_size >= 1.0)) throw Error(Errc::InvalidConfig, "vocabulary size must be >= 1");
  // V * (1 - (1 - 1/V)^C), evaluated without cancellation for large V.
  const double expected =
      vocab_size * -std::expm1(static_cast<double>(total) * std::log1p(-1.0 / vocab_size));
  return static_cast<double>(distinct) / expected;
}

double ead_distinct_n(std::span<const std::string> completions, std::size_t n, double vocab_size) {
  const auto counts = pooled_ngram_counts(completions, n);
  if (counts.total == 0) {
    throw Error(Errc::NoNgrams, "no completion has " + std::to_string(n) + " tokens");
  }
  return ead_from_counts(counts.distinct, counts.total, vocab_size);
}

std::map<std::size_t, double> pool_vocabulary_sizes(std::span<const std::string> pool) {
  std::map<std::size_t, double> sizes;
  for (std::size_t n = 1; n <= kEadMaxN; ++n) {
    const auto counts = pooled_ngram_counts(pool, n);
    if (counts.distinct > 0) sizes[n] = static_cast<double>(counts.distinct);
  }
  return sizes;
}

EadResult ead_average(std::span<const std::string> completions, const EadOptions& options) {
  EadResult result;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t n = 1; n <= kEadMaxN; ++n) {
    const auto counts = pooled_ngram_counts(completions, n);
    if (counts.total == 0) {
      result.by_n[n] = std::nullopt;
      result.excluded_n.push_back(n);
      continue;
    }
    double vocab = static_cast<double>(counts.distinct);
    if (options.fixed_vocab_size) {
      vocab = *options.fixed_vocab_size;
    } else if (auto it = options.pool_vocab_sizes.find(n); it != options.pool_vocab_sizes.end()) {
      vocab = it->second;
    }
    result.vocab_sizes[n] = vocab;
    const double value = ead_from_counts(counts.distinct, counts.total, vocab);
    result.by_n[n] = value;
    sum += value;
    ++used;
  }
  if (used == 0) throw Error(Errc::NoNgrams, "completions contain no tokens");
  result.mean = sum / static_cast<double>(used);
  return result;
}

double embedding_diversity(std::span<const std::vector<double>> embeddings) {
  if (embeddings.size() < 2) throw Error(Errc::TooFewEmbeddings, "need at least 2 embeddings");
  const std::size_t dim = embeddings.front().size();
  std::vector<double> norms;
  norms.reserve(embeddings.size());
  for (const auto& e : embeddings) {
    if (e.size() != dim) {
      throw Error(Errc::DimensionMismatch,
                  "embedding of dimension " + std::to_string(e.size()) + " vs " + std::to_string(dim));
    }
    const double norm = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
    if (norm == 0.0) throw Error(Errc::InvalidConfig, "zero embedding vector");
    norms.push_back(norm);
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const double dot = std::inner_product(embeddings[i].begin(), embeddings[i].end(), embeddings[j].begin(), 0.0);
      total += dot / (norms[i] * norms[j]);
      ++pairs;
    }
  }
  return 1.0 - total / static_cast<double>(pairs);
}

std::string_view to_string(NliLabel label) noexcept {
  switch (label) {
    case NliLabel::Entailment: return "entailment";
    case NliLabel::Contradiction: return "contradiction";
    case NliLabel::Neutral: return "neutral";
  }
  return "neutral";
}

NliLabel parse_nli_label(std::string_view name) {
  if (name == "entailment") return NliLabel::Entailment;
  if (name == "contradiction") return NliLabel::Contradiction;
  if (name == "neutral") return NliLabel::Neutral;
  throw Error(Errc::ProviderError, "unknown NLI label '" + std::string(name) + "'");
}

HttpNliProvider::HttpNliProvider(http::ClientOptions options) : client_(std::move(options)) {}

NliLabel HttpNliProvider::judge(const std::string& premise, const std::string& hypothesis) {
  try {
    const auto reply = client_.post("/v1/nli", {{"premise", premise}, {"hypothesis", hypothesis}});
    return parse_nli_label(reply.at("label").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ProviderError, "NLI reply from " + client_.base_url() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ProviderError) throw;
    throw Error(Errc::ProviderError, e.what());
  }
}

std::string HttpNliProvider::id() const { return "nli:" + client_.base_url(); }

HttpEmbeddingProvider::HttpEmbeddingProvider(http::ClientOptions options, std::string model)
    : client_(std::move(options)), model_(std::move(model)) {}

std::vector<std::vector<double>> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
  try {
    const auto reply = client_.post("/v1/embeddings", {{"model", model_}, {"input", texts}});
    std::vector<nlohmann::json> data(reply.at("data").begin(), reply.at("data").end());
    std::stable_sort(data.begin(), data.end(), [](const auto& a, const auto& b) {
      return a.value("index", 0) < b.value("index", 0);
    });
    if (data.size() != texts.size()) {
      throw Error(Errc::ProviderError, "embedding provider returned " + std::to_string(data.size()) +
                                           " vectors for " + std::to_string(texts.size()) + " inputs");
    }
    std::vector<std::vector<double>> out;
    out.reserve(data.size());
    for (const auto& d : data) out.push_back(d.at("embedding").get<std::vector<double>>());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ProviderError, "embedding reply from " + client_.base_url() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ProviderError) throw;
    throw Error(Errc::ProviderError, e.what());
  }
}

std::string HttpEmbeddingProvider::id() const { return "embedding:" + client_.base_url() + "#" + model_; }

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t m, std::size_t max_pairs,
                                                              std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  }
  if (pairs.size() > max_pairs) {
    std::mt19937_64 rng(seed);
    partial_shuffle(pairs, max_pairs, rng);
    pairs.resize(max_pairs);
    std::sort(pairs.begin(), pairs.end());
  }
  return pairs;
}

NliResult nli_diversity(std::span<const std::string> completions, NliProvider& provider, const NliOptions& options) {
  if (completions.size() < 2) throw Error(Errc::TooFewCompletions, "NLI diversity needs at least 2 completions");
  if (options.max_pairs == 0) throw Error(Errc::InvalidConfig, "max_pairs must be positive");
  const auto pairs = sample_pairs(completions.size(), options.max_pairs, options.seed);

  std::vector<NliLabel> labels(pairs.size(), NliLabel::Neutral);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&] {
    for (std::size_t p = next++; p < pairs.size(); p = next++) {
      const std::string& a = completions[pairs[p].first];
      const std::string& b = completions[pairs[p].second];
      try {
        labels[p] = a <= b ? provider.judge(a, b) : provider.judge(b, a);
      } catch (...) {
        std::scoped_lock lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.concurrency, 1, pairs.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const Error& e) {
      if (e.code() == Errc::ProviderError) throw;
      throw Error(Errc::ProviderError, "NLI provider " + provider.id() + ": " + e.what());
    }
  }

  const auto related = std::count_if(labels.begin(), labels.end(),
                                     [](NliLabel l) { return l != NliLabel::Neutral; });
  return {static_cast<double>(related) / static_cast<double>(pairs.size()), pairs.size()};
}

void to_json(nlohmann::json& j, const DiversityProfile& p) {
  nlohmann::json by_n = nlohmann::json::object();
  for (const auto& [n, v] : p.ead_by_n) by_n[std::to_string(n)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [n, v] : p.ead_vocab_sizes) vocab[std::to_string(n)] = v;
  j = {{"kind", "diversity"},
       {"prompt_id", p.prompt_id},
       {"ead", p.ead},
       {"ead_by_n", by_n},
       {"ead_excluded_n", p.ead_excluded_n},
       {"ead_vocab_sizes", vocab},
       {"nli_diversity", p.nli_diversity ? nlohmann::json(*p.nli_diversity) : nlohmann::json(nullptr)},
       {"embedding_diversity",
        p.embedding_diversity ? nlohmann::json(*p.embedding_diversity) : nlohmann::json(nullptr)},
       {"pair_count", p.pair_count},
       {"provider_ids", p.provider_ids},
       {"completion_count", p.completion_count}};
}

void from_json(const nlohmann::json& j, DiversityProfile& p) {
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.ead = j.at("ead").get<double>();
  p.ead_by_n.clear();
  for (const auto& [key, v] : j.at("ead_by_n").items()) {
    p.ead_by_n[std::stoul(key)] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  p.ead_excluded_n = j.value("ead_excluded_n", std::vector<std::size_t>{});
  p.ead_vocab_sizes.clear();
  const auto vocab = j.value("ead_vocab_sizes", nlohmann::json::object());
  for (const auto& [key, v] : vocab.items()) {
    p.ead_vocab_sizes[std::stoul(key)] = v.get<double>();
  }
  const auto opt = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
  };
  p.nli_diversity = opt("nli_diversity");
  p.embedding_diversity = opt("embedding_diversity");
  p.pair_count = j.value("pair_count", std::size_t{0});
  p.provider_ids = j.value("provider_ids", std::map<std::string, std::string>{});
  p.completion_count = j.value("completion_count", std::size_t{0});
}

DiversityProfile compute_profile(const std::string& prompt_id, std::span<const std::string> completions,
                                 const ProfileOptions& options) {
  DiversityProfile profile;
  profile.prompt_id = prompt_id;
  profile.completion_count = completions.size();
  const auto ead = ead_average(completions, options.ead);
  profile.ead = ead.mean;
  profile.ead_by_n = ead.by_n;
  profile.ead_excluded_n = ead.excluded_n;
  profile.ead_vocab_sizes = ead.vocab_sizes;

  if (options.nli_provider != nullptr) {
    const auto nli = nli_diversity(completions, *options.nli_provider, options.nli);
    profile.nli_diversity = nli.diversity;
    profile.pair_count = nli.pair_count;
    profile.provider_ids["nli"] = options.nli_provider->id();
  }
  if (options.embedding_provider != nullptr) {
    const auto vectors = options.embedding_provider->embed(completions);
    profile.embedding_diversity = embedding_diversity(vectors);
    profile.provider_ids["embedding"] = options.embedding_provider->id();
  }
  return profile;
}

}  // namespace rlvrdetect::diversity
