#pragma once

// Straightforward reference implementations, written independently of the
// library kernels. Tests compare the library against these.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

/// Full (n+1) x (m+1) Wagner-Fischer table.
template <class Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<std::size_t>> t(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) t[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) t[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = t[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      t[i][j] = std::min({t[i - 1][j] + 1, t[i][j - 1] + 1, sub});
    }
  }
  return t[n][m];
}

/// Byte-level (ASCII test strings) normalized distance.
inline double normalized(const std::string& a, const std::string& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

/// Enumerates every ordered pair directly; ASCII strings, char units.
inline double min_knn(const std::vector<std::string>& completions, std::size_t k) {
  std::vector<double> nn;
  for (std::size_t i = 0; i < completions.size(); ++i) {
    double best = 2.0;
    for (std::size_t j = 0; j < completions.size(); ++j) {
      if (i != j) best = std::min(best, normalized(completions[i], completions[j]));
    }
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  double sum = 0.0;
  for (std::size_t t = 0; t < k; ++t) sum += nn[t];
  return sum / static_cast<double>(k);
}

/// O(n^2) pair counting with half credit for ties. `lower_means_member`
/// compares raw values with the inequality flipped.
inline double auc(const std::vector<double>& members, const std::vector<double>& nonmembers,
                  bool lower_means_member) {
  double credit = 0.0;
  for (double x : members) {
    for (double y : nonmembers) {
      const bool better = lower_means_member ? x < y : x > y;
      if (better) {
        credit += 1.0;
      } else if (x == y) {
        credit += 0.5;
      }
    }
  }
  return credit / (static_cast<double>(members.size()) * static_cast<double>(nonmembers.size()));
}

/// distinct / (V (1 - (1 - 1/V)^C)) evaluated with plain pow.
inline double ead(double distinct, double total, double vocab) {
  return distinct / (vocab * (1.0 - std::pow(1.0 - 1.0 / vocab, total)));
}

}  // namespace oracle
