#include "rlvrdetect/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rlvrdetect/error.hpp"

namespace rlvrdetect::detector {

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::MinKnn: return "min-knn";
    case Method::Cdd: return "cdd";
    case Method::Ppl: return "ppl";
    case Method::MinKPercent: return "min-k-percent";
  }
  return "unknown";
}

std::string_view to_string(Orientation orientation) noexcept {
  return orientation == Orientation::LowerMeansMember ? "lower-means-member" : "higher-means-member";
}

std::string_view to_string(Membership membership) noexcept {
  return membership == Membership::Member ? "member" : "non-member";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::MinKnn, Method::Cdd, Method::Ppl, Method::MinKPercent}) {
    if (name == to_string(m)) return m;
  }
  throw Error(Errc::InvalidConfig, "unknown method '" + std::string(name) + "'");
}

Orientation parse_orientation(std::string_view name) {
  if (name == to_string(Orientation::LowerMeansMember)) return Orientation::LowerMeansMember;
  if (name == to_string(Orientation::HigherMeansMember)) return Orientation::HigherMeansMember;
  throw Error(Errc::ParseError, "unknown orientation '" + std::string(name) + "'");
}

Membership parse_membership(std::string_view name) {
  if (name == "member") return Membership::Member;
  if (name == "non-member") return Membership::NonMember;
  throw Error(Errc::ParseError, "unknown label '" + std::string(name) + "'");
}

Orientation orientation_of(Method method) noexcept {
  switch (method) {
    case Method::MinKnn:
    case Method::Ppl:
      return Orientation::LowerMeansMember;
    case Method::Cdd:
    case Method::MinKPercent:
      return Orientation::HigherMeansMember;
  }
  return Orientation::LowerMeansMember;
}

void DetectorConfig::validate() const {
  if (k == 0) throw Error(Errc::InvalidConfig, "k must be positive");
  if (m == 0) throw Error(Errc::InvalidConfig, "m must be positive");
  if (k > m) throw Error(Errc::KTooLarge, "k=" + std::to_string(k) + " exceeds m=" + std::to_string(m));
  if (!(cdd_alpha > 0.0 && cdd_alpha <= 1.0)) throw Error(Errc::InvalidConfig, "cdd_alpha must be in (0,1]");
  if (!(min_k_fraction > 0.0 && min_k_fraction <= 1.0)) {
    throw Error(Errc::InvalidConfig, "min_k_fraction must be in (0,1]");
  }
  if (threshold && !std::isfinite(*threshold)) throw Error(Errc::InvalidConfig, "threshold must be finite");
}

std::vector<double> nearest_neighbor_distances(const distance::DistanceMatrix& matrix) {
  const std::size_t m = matrix.size();
  if (m < 2) throw Error(Errc::SingleCompletion, "nearest neighbors need at least 2 completions");
  std::vector<double> nn(m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) nn[i] = std::min(nn[i], matrix(i, j));
    }
  }
  std::sort(nn.begin(), nn.end());
  return nn;
}

DetectionScore min_knn_score(const distance::DistanceMatrix& matrix, std::size_t k) {
  const std::size_t m = matrix.size();
  if (m < 2) throw Error(Errc::SingleCompletion, "min-knn needs at least 2 completions, got " + std::to_string(m));
  if (k == 0) throw Error(Errc::InvalidConfig, "k must be positive");
  if (k > m) throw Error(Errc::KTooLarge, "k=" + std::to_string(k) + " exceeds m=" + std::to_string(m));
  const std::vector<double> nn = nearest_neighbor_distances(matrix);
  // Running mean over the sorted distances, clamped so that rounding can
  // never make the score decrease as k grows.
  double mean = nn[0];
  for (std::size_t i = 1; i < k; ++i) {
    mean = std::clamp(mean + (nn[i] - mean) / static_cast<double>(i + 1), mean, nn[i]);
  }

  DetectionScore out;
  out.method = Method::MinKnn;
  out.score = mean;
  out.orientation = Orientation::LowerMeansMember;
  out.m_used = m;
  out.k_used = k;
  return out;
}

DetectionScore min_knn_score(std::span<const std::string> completions, const DetectorConfig& config) {
  if (completions.size() < 2) {
    throw Error(Errc::SingleCompletion,
                "min-knn needs at least 2 completions, got " + std::to_string(completions.size()));
  }
  if (config.k > completions.size()) {
    throw Error(Errc::KTooLarge,
                "k=" + std::to_string(config.k) + " exceeds m=" + std::to_string(completions.size()));
  }
  const auto matrix = distance::pairwise_distance_matrix(
      completions, {.unit_mode = config.unit_mode, .max_units = config.max_units, .threads = config.threads});
  return min_knn_score(matrix, config.k);
}

DetectionScore cdd_score(std::string_view greedy, std::span<const std::string> samples,
                         const DetectorConfig& config) {
  if (samples.empty()) throw Error(Errc::EmptySamples, "cdd needs at least one stochastic sample");
  distance::UnitEncoder encoder(config.unit_mode, config.max_units);
  const auto reference = encoder.encode(greedy);
  std::size_t peaked = 0;
  for (const auto& sample : samples) {
    if (distance::normalized_edit_distance(encoder.encode(sample), reference) <= config.cdd_alpha) ++peaked;
  }
  DetectionScore out;
  out.method = Method::Cdd;
  out.score = static_cast<double>(peaked) / static_cast<double>(samples.size());
  out.orientation = Orientation::HigherMeansMember;
  out.m_used = samples.size();
  return out;
}

namespace {

void check_logprobs(std::span<const double> logprobs) {
  if (logprobs.empty()) throw Error(Errc::EmptyLogprobs, "no token logprobs");
}

}  // namespace

DetectionScore ppl_score(std::span<const double> token_logprobs) {
  check_logprobs(token_logprobs);
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) throw Error(Errc::PositiveLogprob, "logprob " + std::to_string(lp) + " is not <= 0");
  }
  const double mean = std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0) /
                      static_cast<double>(token_logprobs.size());
  DetectionScore out;
  out.method = Method::Ppl;
  out.score = std::exp(-mean);
  out.orientation = Orientation::LowerMeansMember;
  out.m_used = token_logprobs.size();
  return out;
}

DetectionScore min_k_percent_score(std::span<const double> token_logprobs, double min_k_fraction) {
  check_logprobs(token_logprobs);
  if (!(min_k_fraction > 0.0 && min_k_fraction <= 1.0)) {
    throw Error(Errc::InvalidConfig, "min_k_fraction must be in (0,1]");
  }
  std::vector<double> sorted(token_logprobs.begin(), token_logprobs.end());
  std::sort(sorted.begin(), sorted.end());
  const double raw = min_k_fraction * static_cast<double>(sorted.size());
  // Guard against products like 0.2 * 5 = 1.0000000000000002 rounding up.
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  count = std::clamp<std::size_t>(count, 1, sorted.size());
  const double sum = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(count), 0.0);

  DetectionScore out;
  out.method = Method::MinKPercent;
  out.score = sum / static_cast<double>(count);
  out.orientation = Orientation::HigherMeansMember;
  out.m_used = token_logprobs.size();
  return out;
}

Membership classify(const DetectionScore& score, double threshold) {
  const bool member = score.orientation == Orientation::LowerMeansMember ? score.score <= threshold
                                                                        : score.score >= threshold;
  return member ? Membership::Member : Membership::NonMember;
}

}  // namespace rlvrdetect::detector
