#pragma once

// Seeded generators for the collapse benchmark and for clustering trials.
// Member prompts get completions drawn from a few templates with light token
// mutation; non-member prompts get mutually distant completions.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rlvrdetect/corpus.hpp"

namespace rlvrdetect::synthetic {

struct BenchmarkOptions {
  std::size_t members = 100;
  std::size_t nonmembers = 100;
  std::size_t completions = 32;
  std::size_t min_templates = 2;
  std::size_t max_templates = 4;
  // Per-completion mutation rate is drawn uniformly from [0, max_mutation].
  double max_mutation = 0.05;
  std::size_t min_length = 80;
  std::size_t max_length = 160;
  std::size_t vocabulary = 2000;
  std::uint64_t seed = 20240601;
};

struct SyntheticPrompt {
  corpus::PromptRecord prompt;
  std::vector<std::string> completions;
  // 0 for non-members.
  std::size_t template_count = 0;
};

std::vector<SyntheticPrompt> generate_benchmark(const BenchmarkOptions& options = {});

/// `count` completions around `templates` random templates.
std::vector<std::string> collapsed_completions(std::mt19937_64& rng, std::size_t count, std::size_t templates,
                                               const BenchmarkOptions& options);

/// `count` independent random completions.
std::vector<std::string> diverse_completions(std::mt19937_64& rng, std::size_t count,
                                             const BenchmarkOptions& options);

/// Deterministic completions for one prompt, used by the stub server. The
/// template set depends only on the prompt; per-completion noise also depends
/// on `seed` and the completion index.
std::vector<std::string> completions_for_prompt(std::string_view prompt, bool member, std::size_t count,
                                                std::uint64_t seed, const BenchmarkOptions& options = {});

struct ClusterTrial {
  std::vector<std::string> completions;
  std::vector<std::string> logic_ngrams;
  std::vector<std::size_t> group_of;
  std::size_t groups = 0;
};

/// `groups` disjoint logic-template groups over `completions` completions
/// (each group non-empty), padded with random filler text.
ClusterTrial generate_cluster_trial(std::size_t groups, std::size_t completions, std::uint64_t seed);

}  // namespace rlvrdetect::synthetic
