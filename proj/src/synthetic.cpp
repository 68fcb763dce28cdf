#include "rlvrdetect/synthetic.hpp"

#include <algorithm>

#include "rlvrdetect/error.hpp"
#include "rlvrdetect/hash.hpp"
#include "rlvrdetect/random.hpp"

namespace rlvrdetect::synthetic {

namespace {

using Tokens = std::vector<std::string>;

std::string word(std::mt19937_64& rng, std::size_t vocabulary) {
  return "w" + std::to_string(uniform_below(rng, vocabulary));
}

std::size_t draw_length(std::mt19937_64& rng, const BenchmarkOptions& o) {
  return o.min_length + static_cast<std::size_t>(uniform_below(rng, o.max_length - o.min_length + 1));
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t length, std::size_t vocabulary) {
  Tokens out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(word(rng, vocabulary));
  return out;
}

// Substitutes, deletes or inserts a token at each position with probability `rate`.
Tokens mutate(const Tokens& base, double rate, std::mt19937_64& rng, std::size_t vocabulary) {
  Tokens out;
  out.reserve(base.size() + 4);
  for (const auto& token : base) {
    if (uniform_unit(rng) >= rate) {
      out.push_back(token);
      continue;
    }
    switch (uniform_below(rng, 3)) {
      case 0: out.push_back(word(rng, vocabulary)); break;
      case 1: break;
      default:
        out.push_back(token);
        out.push_back(word(rng, vocabulary));
        break;
    }
  }
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::uint64_t seed_from(std::string_view text, std::uint64_t salt) {
  const std::string digest = sha256_hex(text);
  return std::stoull(digest.substr(0, 16), nullptr, 16) ^ (salt * 0x9E3779B97F4A7C15ull);
}

void check(const BenchmarkOptions& o) {
  if (o.min_templates == 0 || o.min_templates > o.max_templates) {
    throw Error(Errc::InvalidConfig, "template range must satisfy 1 <= min <= max");
  }
  if (o.min_length == 0 || o.min_length > o.max_length) {
    throw Error(Errc::InvalidConfig, "length range must satisfy 1 <= min <= max");
  }
  if (o.vocabulary < 2) throw Error(Errc::InvalidConfig, "vocabulary must be >= 2");
  if (!(o.max_mutation >= 0.0 && o.max_mutation <= 1.0)) throw Error(Errc::InvalidConfig, "max_mutation in [0,1]");
}

}  // namespace

std::vector<std::string> collapsed_completions(std::mt19937_64& rng, std::size_t count, std::size_t templates,
                                               const BenchmarkOptions& options) {
  std::vector<Tokens> bases;
  for (std::size_t t = 0; t < templates; ++t) bases.push_back(random_tokens(rng, draw_length(rng, options), options.vocabulary));
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Every template is used at least once when count allows.
    const std::size_t t = i < templates ? i : static_cast<std::size_t>(uniform_below(rng, templates));
    const double rate = uniform_unit(rng) * options.max_mutation;
    out.push_back(join(mutate(bases[t], rate, rng, options.vocabulary)));
  }
  return out;
}

std::vector<std::string> diverse_completions(std::mt19937_64& rng, std::size_t count,
                                             const BenchmarkOptions& options) {
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(join(random_tokens(rng, draw_length(rng, options), options.vocabulary)));
  }
  return out;
}

std::vector<SyntheticPrompt> generate_benchmark(const BenchmarkOptions& options) {
  check(options);
  std::mt19937_64 rng(options.seed);
  std::vector<SyntheticPrompt> out;
  const std::size_t total = options.members + options.nonmembers;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const bool member = i < options.members;
    SyntheticPrompt p;
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", member ? "seen" : "unseen", member ? i : i - options.members);
    p.prompt.id = id;
    p.prompt.prompt = "Synthetic problem " + std::string(id) + ": " + join(random_tokens(rng, 12, options.vocabulary));
    p.prompt.label = member ? detector::Membership::Member : detector::Membership::NonMember;
    p.prompt.source = "synthetic";
    if (member) {
      p.template_count = options.min_templates +
                         static_cast<std::size_t>(uniform_below(rng, options.max_templates - options.min_templates + 1));
      p.completions = collapsed_completions(rng, options.completions, p.template_count, options);
    } else {
      p.completions = diverse_completions(rng, options.completions, options);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::string> completions_for_prompt(std::string_view prompt, bool member, std::size_t count,
                                                std::uint64_t seed, const BenchmarkOptions& options) {
  check(options);
  std::mt19937_64 prompt_rng(seed_from(prompt, 0));
  std::vector<Tokens> bases;
  if (member) {
    const std::size_t templates =
        options.min_templates +
        static_cast<std::size_t>(uniform_below(prompt_rng, options.max_templates - options.min_templates + 1));
    for (std::size_t t = 0; t < templates; ++t) {
      bases.push_back(random_tokens(prompt_rng, draw_length(prompt_rng, options), options.vocabulary));
    }
  }
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed_from(prompt, seed * 1000003ull + i + 1));
    if (member) {
      const std::size_t t = static_cast<std::size_t>(uniform_below(rng, bases.size()));
      const double rate = uniform_unit(rng) * options.max_mutation;
      out.push_back(join(mutate(bases[t], rate, rng, options.vocabulary)));
    } else {
      out.push_back(join(random_tokens(rng, draw_length(rng, options), options.vocabulary)));
    }
  }
  return out;
}

ClusterTrial generate_cluster_trial(std::size_t groups, std::size_t completions, std::uint64_t seed) {
  if (groups == 0 || groups > completions) {
    throw Error(Errc::InvalidConfig, "need 1 <= groups <= completions");
  }
  std::mt19937_64 rng(seed);
  ClusterTrial trial;
  trial.groups = groups;

  // Each group owns a few disjoint logic 3-grams; filler tokens never collide with them.
  std::vector<std::vector<std::string>> group_grams(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t grams = 2 + static_cast<std::size_t>(uniform_below(rng, 4));
    for (std::size_t k = 0; k < grams; ++k) {
      const std::string prefix = "g" + std::to_string(g) + "k" + std::to_string(k);
      group_grams[g].push_back(prefix + "_x = " + prefix + "_y");
      trial.logic_ngrams.push_back(group_grams[g].back());
    }
  }

  trial.group_of.resize(completions);
  for (std::size_t i = 0; i < completions; ++i) {
    trial.group_of[i] = i < groups ? i : static_cast<std::size_t>(uniform_below(rng, groups));
  }
  partial_shuffle(trial.group_of, completions, rng);

  for (std::size_t i = 0; i < completions; ++i) {
    Tokens tokens;
    for (const auto& gram : group_grams[trial.group_of[i]]) {
      const std::size_t filler = 1 + static_cast<std::size_t>(uniform_below(rng, 6));
      for (std::size_t f = 0; f < filler; ++f) tokens.push_back("f" + std::to_string(uniform_below(rng, 500)));
      tokens.push_back(gram);
    }
    tokens.push_back("f" + std::to_string(uniform_below(rng, 500)));
    trial.completions.push_back(join(tokens));
  }
  return trial;
}

}  // namespace rlvrdetect::synthetic
