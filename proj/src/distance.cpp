#include "rlvrdetect/distance.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <thread>
#include <utility>

#include "rlvrdetect/error.hpp"

namespace rlvrdetect::distance {

namespace {

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

using Units = std::span<const std::uint32_t>;

// Drops the shared prefix and suffix; neither changes the edit distance.
std::pair<Units, Units> strip_common_affixes(Units a, Units b) {
  std::size_t prefix = 0;
  const std::size_t limit = std::min(a.size(), b.size());
  while (prefix < limit && a[prefix] == b[prefix]) ++prefix;
  a = a.subspan(prefix);
  b = b.subspan(prefix);
  std::size_t suffix = 0;
  const std::size_t rest = std::min(a.size(), b.size());
  while (suffix < rest && a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix]) ++suffix;
  return {a.first(a.size() - suffix), b.first(b.size() - suffix)};
}

std::vector<std::uint32_t>& scratch_row(std::size_t size) {
  thread_local std::vector<std::uint32_t> row;
  row.resize(size);
  return row;
}

}  // namespace

std::string_view to_string(UnitMode mode) noexcept {
  return mode == UnitMode::Char ? "char" : "token";
}

UnitMode parse_unit_mode(std::string_view name) {
  if (name == "char") return UnitMode::Char;
  if (name == "token") return UnitMode::Token;
  throw Error(Errc::InvalidConfig, "unknown unit mode '" + std::string(name) + "'");
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<std::string_view> split_tokens(std::string_view text) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.push_back(text.substr(start, i - start));
  }
  return tokens;
}

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char lead = byte(i);
    std::size_t len = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      if ((byte(i + k) & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    static constexpr char32_t kMinForLength[] = {0, 0, 0x80, 0x800, 0x10000};
    if (ok && (cp < kMinForLength[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
    if (ok) {
      out.push_back(cp);
      i += len;
    } else {
      out.push_back(U'\uFFFD');
      ++i;
    }
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

UnitEncoder::UnitEncoder(UnitMode mode, std::size_t max_units) : mode_(mode), max_units_(max_units) {}

UnitSequence UnitEncoder::encode(std::string_view text) {
  UnitSequence seq;
  seq.mode = mode_;
  seq.source_text = std::string(text);
  if (mode_ == UnitMode::Char) {
    const std::u32string scalars = decode_utf8(text);
    seq.units.assign(scalars.begin(), scalars.end());
  } else {
    for (std::string_view token : split_tokens(text)) {
      auto [it, inserted] = ids_.try_emplace(std::string(token), static_cast<std::uint32_t>(tokens_.size()));
      if (inserted) tokens_.emplace_back(token);
      seq.units.push_back(it->second);
    }
  }
  if (seq.units.size() > max_units_) {
    seq.units.resize(max_units_);
    seq.truncated = true;
  }
  return seq;
}

std::string UnitEncoder::decode(const UnitSequence& seq) const {
  if (seq.mode == UnitMode::Char) {
    return encode_utf8(std::u32string(seq.units.begin(), seq.units.end()));
  }
  std::string out;
  for (std::size_t i = 0; i < seq.units.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens_.at(seq.units[i]);
  }
  return out;
}

std::size_t levenshtein(Units a, Units b) {
  std::tie(a, b) = strip_common_affixes(a, b);
  if (a.size() < b.size()) std::swap(a, b);
  // b is the shorter side and sets the row width.
  if (b.empty()) return a.size();

  auto& row = scratch_row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::uint32_t{0});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::uint32_t ai = a[i];
    std::uint32_t diag = row[0];
    row[0] = static_cast<std::uint32_t>(i + 1);
    std::uint32_t left = row[0];
    for (std::size_t j = 0; j < b.size(); ++j) {
      const std::uint32_t up = row[j + 1];
      const std::uint32_t substitute = diag + (ai != b[j] ? 1u : 0u);
      const std::uint32_t indel = std::min(up, left) + 1u;
      left = std::min(substitute, indel);
      row[j + 1] = left;
      diag = up;
    }
  }
  return row[b.size()];
}

std::optional<std::size_t> levenshtein_bounded(Units a, Units b, std::size_t max_distance) {
  std::tie(a, b) = strip_common_affixes(a, b);
  if (a.size() < b.size()) std::swap(a, b);
  if (a.size() - b.size() > max_distance) return std::nullopt;
  if (b.empty()) return a.size();

  const std::size_t n = b.size();
  // The distance never exceeds the longer length, so wider bands add nothing.
  const std::size_t band = std::min(max_distance, a.size());
  // Anything outside the band costs more than max_distance, so it is clamped.
  const auto inf = static_cast<std::uint32_t>(band + 1);
  auto& row = scratch_row(n + 1);
  for (std::size_t j = 0; j <= n; ++j) row[j] = j <= band ? static_cast<std::uint32_t>(j) : inf;

  for (std::size_t i = 1; i <= a.size(); ++i) {
    const std::size_t lo = i > band ? i - band : 1;
    const std::size_t hi = std::min(n, i + band);
    if (lo > hi) return std::nullopt;
    std::uint32_t diag = row[lo - 1];
    row[lo - 1] = lo == 1 ? std::min<std::uint32_t>(static_cast<std::uint32_t>(i), inf) : inf;
    std::uint32_t left = row[lo - 1];
    std::uint32_t row_min = left;
    const std::uint32_t ai = a[i - 1];
    for (std::size_t j = lo; j <= hi; ++j) {
      const std::uint32_t up = row[j];
      const std::uint32_t substitute = diag + (ai != b[j - 1] ? 1u : 0u);
      const std::uint32_t indel = std::min(up, left) + 1u;
      left = std::min({substitute, indel, inf});
      row[j] = left;
      row_min = std::min(row_min, left);
      diag = up;
    }
    if (row_min > band) return std::nullopt;
  }
  if (row[n] > band) return std::nullopt;
  return row[n];
}

std::size_t levenshtein(Units a, Units b, std::optional<std::size_t> bound_hint) {
  if (bound_hint) {
    if (auto banded = levenshtein_bounded(a, b, *bound_hint)) return *banded;
  }
  return levenshtein(a, b);
}

std::size_t levenshtein(const UnitSequence& a, const UnitSequence& b) {
  return levenshtein(Units(a.units), Units(b.units));
}

double normalized_edit_distance(const UnitSequence& a, const UnitSequence& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double normalized_edit_distance(std::string_view a, std::string_view b, UnitMode mode,
                                std::size_t max_units) {
  UnitEncoder encoder(mode, max_units);
  const UnitSequence sa = encoder.encode(a);
  const UnitSequence sb = encoder.encode(b);
  return normalized_edit_distance(sa, sb);
}

DistanceMatrix::DistanceMatrix(std::size_t m, UnitMode mode)
    : m_(m), mode_(mode), values_(m * m, 0.0), truncated_(m, false) {}

void DistanceMatrix::set(std::size_t i, std::size_t j, double value) {
  values_[i * m_ + j] = value;
  values_[j * m_ + i] = value;
}

DistanceMatrix pairwise_distance_matrix(std::span<const std::string> completions,
                                        const DistanceOptions& options) {
  const std::size_t m = completions.size();
  DistanceMatrix matrix(m, options.unit_mode);

  UnitEncoder encoder(options.unit_mode, options.max_units);
  std::vector<UnitSequence> sequences;
  sequences.reserve(m);
  std::vector<bool> truncated(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    sequences.push_back(encoder.encode(completions[i]));
    truncated[i] = sequences.back().truncated;
  }
  matrix.set_truncated(std::move(truncated));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(m * (m - (m > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  }

  // Each pair owns its two cells, so workers never write the same slot.
  std::vector<double> upper(pairs.size());
  const auto work = [&](std::atomic<std::size_t>& next) {
    for (std::size_t p = next++; p < pairs.size(); p = next++) {
      upper[p] = normalized_edit_distance(sequences[pairs[p].first], sequences[pairs[p].second]);
    }
  };

  unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(pairs.size(), 1)));
  std::atomic<std::size_t> next{0};
  if (threads <= 1) {
    work(next);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back([&] { work(next); });
  }

  for (std::size_t p = 0; p < pairs.size(); ++p) matrix.set(pairs[p].first, pairs[p].second, upper[p]);
  return matrix;
}

}  // namespace rlvrdetect::distance
