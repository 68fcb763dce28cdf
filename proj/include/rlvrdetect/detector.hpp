#pragma once

// Membership scores over a prompt's sampled completions: Min-kNN distance plus
// the CDD, perplexity and Min-K% baselines.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlvrdetect/distance.hpp"

namespace rlvrdetect::detector {

enum class Method { MinKnn, Cdd, Ppl, MinKPercent };
enum class Orientation { LowerMeansMember, HigherMeansMember };
enum class Membership { Member, NonMember };

std::string_view to_string(Method method) noexcept;
std::string_view to_string(Orientation orientation) noexcept;
std::string_view to_string(Membership membership) noexcept;
Method parse_method(std::string_view name);
Orientation parse_orientation(std::string_view name);
Membership parse_membership(std::string_view name);

Orientation orientation_of(Method method) noexcept;

struct DetectorConfig {
  std::size_t k = 10;
  std::size_t m = 32;
  distance::UnitMode unit_mode = distance::UnitMode::Token;
  Method method = Method::MinKnn;
  double cdd_alpha = 0.05;
  double min_k_fraction = 0.20;
  std::optional<double> threshold;
  std::size_t max_units = distance::kDefaultMaxUnits;
  unsigned threads = 1;

  /// Throws KTooLarge when k > m and InvalidConfig for out-of-range values.
  void validate() const;
};

struct DetectionScore {
  std::string prompt_id;
  Method method = Method::MinKnn;
  double score = 0.0;
  Orientation orientation = Orientation::LowerMeansMember;
  std::size_t m_used = 0;
  std::optional<std::size_t> k_used;
};

/// NN_i = min_{j != i} D_ij for each row, sorted ascending.
std::vector<double> nearest_neighbor_distances(const distance::DistanceMatrix& matrix);

/// Mean of the k smallest nearest-neighbor distances of a precomputed matrix.
DetectionScore min_knn_score(const distance::DistanceMatrix& matrix, std::size_t k);
DetectionScore min_knn_score(std::span<const std::string> completions, const DetectorConfig& config);

/// Fraction of samples within cdd_alpha (normalized edit distance) of the greedy output.
DetectionScore cdd_score(std::string_view greedy, std::span<const std::string> samples,
                         const DetectorConfig& config);

/// exp(-mean logprob).
DetectionScore ppl_score(std::span<const double> token_logprobs);

/// Mean of the lowest ceil(fraction * n) token logprobs.
DetectionScore min_k_percent_score(std::span<const double> token_logprobs, double min_k_fraction);

/// Threshold decision; a score exactly at the threshold counts as member.
Membership classify(const DetectionScore& score, double threshold);

}  // namespace rlvrdetect::detector
