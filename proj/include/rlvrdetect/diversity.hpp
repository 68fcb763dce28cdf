#pragma once

// Lexical (EAD), logical (NLI) and semantic (embedding) diversity of a set of
// completions.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlvrdetect/http.hpp"

namespace rlvrdetect::diversity {

using Ngram = std::vector<std::string>;

/// Whitespace tokens, identical to the distance module's token mode.
std::vector<std::string> tokenize(std::string_view text);

/// All contiguous n-token windows, in order (a multiset).
std::vector<Ngram> extract_ngrams(std::span<const std::string> tokens, std::size_t n);

/// Tokens joined by single spaces. Injective because tokens hold no whitespace.
std::string join_ngram(std::span<const std::string> ngram);

struct NgramCounts {
  std::size_t total = 0;
  std::size_t distinct = 0;
};

/// n-gram counts pooled over all completions (windows never span completions).
NgramCounts pooled_ngram_counts(std::span<const std::string> completions, std::size_t n);

/// distinct / (V * (1 - (1 - 1/V)^C)).
double ead_from_counts(std::size_t distinct, std::size_t total, double vocab_size);

/// Throws NoNgrams when no completion has n tokens.
double ead_distinct_n(std::span<const std::string> completions, std::size_t n, double vocab_size);

inline constexpr std::size_t kEadMaxN = 5;

/// Distinct n-gram counts for n = 1..5 over an evaluation pool, used as V_n.
std::map<std::size_t, double> pool_vocabulary_sizes(std::span<const std::string> pool);

struct EadOptions {
  // One constant V for every n; takes precedence over pool sizes.
  std::optional<double> fixed_vocab_size;
  // V_n from a wider evaluation pool. Missing n fall back to the completions' own counts.
  std::map<std::size_t, double> pool_vocab_sizes;
};

struct EadResult {
  double mean = 0.0;
  std::map<std::size_t, std::optional<double>> by_n;  // keys 1..5, null when excluded
  std::vector<std::size_t> excluded_n;
  std::map<std::size_t, double> vocab_sizes;
};

/// Mean EAD over n = 1..5; orders without any n-gram are excluded and recorded.
EadResult ead_average(std::span<const std::string> completions, const EadOptions& options = {});

/// 1 - mean pairwise cosine similarity over unordered pairs.
double embedding_diversity(std::span<const std::vector<double>> embeddings);

enum class NliLabel { Entailment, Contradiction, Neutral };
std::string_view to_string(NliLabel label) noexcept;
NliLabel parse_nli_label(std::string_view name);

class NliProvider {
 public:
  virtual ~NliProvider() = default;
  virtual NliLabel judge(const std::string& premise, const std::string& hypothesis) = 0;
  virtual std::string id() const = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
  virtual std::string id() const = 0;
};

/// POST {base_url}/v1/nli with {premise, hypothesis}; reply {label}.
class HttpNliProvider : public NliProvider {
 public:
  explicit HttpNliProvider(http::ClientOptions options);
  NliLabel judge(const std::string& premise, const std::string& hypothesis) override;
  std::string id() const override;

 private:
  http::JsonClient client_;
};

/// POST {base_url}/v1/embeddings, OpenAI-compatible body.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(http::ClientOptions options, std::string model);
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::string id() const override;

 private:
  http::JsonClient client_;
  std::string model_;
};

struct NliOptions {
  std::size_t max_pairs = 64;
  std::uint64_t seed = 0;
  std::size_t concurrency = 1;
};

struct NliResult {
  double diversity = 0.0;
  std::size_t pair_count = 0;
};

/// Unordered index pairs chosen uniformly without replacement (seeded), sorted.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t m, std::size_t max_pairs,
                                                              std::uint64_t seed);

/// (entailment + contradiction) / judged pairs. Each pair is judged once with
/// the lexicographically smaller completion as premise.
NliResult nli_diversity(std::span<const std::string> completions, NliProvider& provider,
                        const NliOptions& options = {});

inline constexpr const char* kCrossInputId = "cross-input";

struct DiversityProfile {
  std::string prompt_id;
  double ead = 0.0;
  std::map<std::size_t, std::optional<double>> ead_by_n;
  std::vector<std::size_t> ead_excluded_n;
  std::map<std::size_t, double> ead_vocab_sizes;
  std::optional<double> nli_diversity;
  std::optional<double> embedding_diversity;
  std::size_t pair_count = 0;
  std::map<std::string, std::string> provider_ids;
  std::size_t completion_count = 0;
};

void to_json(nlohmann::json& j, const DiversityProfile& p);
void from_json(const nlohmann::json& j, DiversityProfile& p);

struct ProfileOptions {
  EadOptions ead;
  NliOptions nli;
  NliProvider* nli_provider = nullptr;
  EmbeddingProvider* embedding_provider = nullptr;
};

/// Metrics without a provider are left absent. Provider failures throw ProviderError.
DiversityProfile compute_profile(const std::string& prompt_id, std::span<const std::string> completions,
                                 const ProfileOptions& options);

}  // namespace rlvrdetect::diversity
