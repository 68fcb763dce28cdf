#pragma once

// Normalized Levenshtein distance over completion texts, and the symmetric
// pairwise matrix the detectors consume.
//
// Texts are first converted to sequences of 32-bit unit ids: Unicode scalar
// values in char mode, interned whitespace-delimited tokens in token mode.
// All kernels operate on those id sequences, so both modes share one exact DP.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rlvrdetect::distance {

enum class UnitMode { Char, Token };

std::string_view to_string(UnitMode mode) noexcept;
/// Accepts "char" or "token"; throws Error(InvalidConfig) otherwise.
UnitMode parse_unit_mode(std::string_view name);

inline constexpr std::size_t kDefaultMaxUnits = 4096;

struct UnitSequence {
  std::vector<std::uint32_t> units;
  std::string source_text;
  UnitMode mode = UnitMode::Token;
  // Set when the source had more than max_units units and was cut.
  bool truncated = false;

  std::size_t size() const noexcept { return units.size(); }
};

/// Collapses runs of ASCII whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// Whitespace-delimited tokens of `text`. Views point into `text`.
std::vector<std::string_view> split_tokens(std::string_view text);

/// Decodes UTF-8; each invalid byte becomes U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);

/// Maps texts to unit sequences. In token mode the encoder interns tokens, so
/// sequences are only comparable when produced by the same encoder.
class UnitEncoder {
 public:
  explicit UnitEncoder(UnitMode mode, std::size_t max_units = kDefaultMaxUnits);

  UnitSequence encode(std::string_view text);
  /// Inverse of encode up to normalization: tokens joined by single spaces in
  /// token mode, UTF-8 re-encoding in char mode.
  std::string decode(const UnitSequence& seq) const;

  UnitMode mode() const noexcept { return mode_; }
  std::size_t vocabulary_size() const noexcept { return tokens_.size(); }

 private:
  UnitMode mode_;
  std::size_t max_units_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> tokens_;
};

/// Exact edit distance (unit insert, delete, substitute) with two-row DP.
std::size_t levenshtein(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

/// Ukkonen-banded DP. Returns the exact distance when it is <= max_distance,
/// otherwise nullopt.
std::optional<std::size_t> levenshtein_bounded(std::span<const std::uint32_t> a,
                                               std::span<const std::uint32_t> b,
                                               std::size_t max_distance);

/// Tries the band first when an upper bound hint is given and falls back to
/// the full DP when the band is exceeded. Always exact.
std::size_t levenshtein(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                        std::optional<std::size_t> bound_hint);

std::size_t levenshtein(const UnitSequence& a, const UnitSequence& b);

/// levenshtein / max(|a|, |b|), and 0 when both are empty.
double normalized_edit_distance(const UnitSequence& a, const UnitSequence& b);
double normalized_edit_distance(std::string_view a, std::string_view b, UnitMode mode,
                                std::size_t max_units = kDefaultMaxUnits);

struct DistanceOptions {
  UnitMode unit_mode = UnitMode::Token;
  std::size_t max_units = kDefaultMaxUnits;
  // 0 picks std::thread::hardware_concurrency().
  unsigned threads = 1;
};

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::size_t m, UnitMode mode);

  std::size_t size() const noexcept { return m_; }
  UnitMode unit_mode() const noexcept { return mode_; }

  double operator()(std::size_t i, std::size_t j) const { return values_[i * m_ + j]; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * m_, m_}; }

  /// Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double value);

  const std::vector<bool>& truncated() const noexcept { return truncated_; }
  void set_truncated(std::vector<bool> flags) { truncated_ = std::move(flags); }

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::size_t m_ = 0;
  UnitMode mode_ = UnitMode::Token;
  std::vector<double> values_;
  std::vector<bool> truncated_;
};

/// Computes the upper triangle (possibly across threads) and mirrors it.
/// Output does not depend on the thread count.
DistanceMatrix pairwise_distance_matrix(std::span<const std::string> completions,
                                        const DistanceOptions& options = {});

}  // namespace rlvrdetect::distance
