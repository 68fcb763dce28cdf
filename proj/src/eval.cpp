#include "rlvrdetect/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "rlvrdetect/error.hpp"
#include "rlvrdetect/random.hpp"

namespace rlvrdetect::eval {

LabeledCorpus LabeledCorpus::from_prompts(std::span<const corpus::PromptRecord> prompts) {
  LabeledCorpus out;
  std::unordered_set<std::string> seen;
  for (const auto& p : prompts) {
    if (!p.label) throw Error(Errc::UnlabeledPrompt, "prompt '" + p.id + "' has no label");
    if (!seen.insert(p.id).second) throw Error(Errc::DuplicateId, "prompt id '" + p.id + "' repeated");
    out.examples.push_back({p.id, p.prompt, *p.label, p.source.value_or("")});
  }
  return out;
}

std::size_t LabeledCorpus::member_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                [](const auto& e) { return e.label == Membership::Member; }));
}

std::size_t LabeledCorpus::nonmember_count() const noexcept { return examples.size() - member_count(); }

double roc_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores,
               Orientation orientation) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw Error(Errc::EmptyClass, "AUC needs at least one member and one non-member (got " +
                                      std::to_string(member_scores.size()) + " and " +
                                      std::to_string(nonmember_scores.size()) + ")");
  }
  const double sign = orientation == Orientation::LowerMeansMember ? -1.0 : 1.0;
  struct Item {
    double value;
    bool member;
  };
  std::vector<Item> items;
  items.reserve(member_scores.size() + nonmember_scores.size());
  for (double s : member_scores) {
    if (!std::isfinite(s)) throw Error(Errc::NonFiniteScore, "member score " + std::to_string(s));
    items.push_back({sign * s, true});
  }
  for (double s : nonmember_scores) {
    if (!std::isfinite(s)) throw Error(Errc::NonFiniteScore, "non-member score " + std::to_string(s));
    items.push_back({sign * s, false});
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.value < b.value; });

  // Twice the Mann-Whitney U in integers: 2 per member-above pair, 1 per tie.
  unsigned long long twice_u = 0;
  unsigned long long nonmembers_below = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    unsigned long long block_members = 0;
    unsigned long long block_nonmembers = 0;
    while (j < items.size() && items[j].value == items[i].value) {
      (items[j].member ? block_members : block_nonmembers) += 1;
      ++j;
    }
    twice_u += 2 * block_members * nonmembers_below + block_members * block_nonmembers;
    nonmembers_below += block_nonmembers;
    i = j;
  }
  const double pairs = static_cast<double>(member_scores.size()) * static_cast<double>(nonmember_scores.size());
  return static_cast<double>(twice_u) / (2.0 * pairs);
}

std::string_view to_string(SubsetTag tag) noexcept {
  switch (tag) {
    case SubsetTag::Full: return "full";
    case SubsetTag::LowPretrainContamination: return "low-pretrain-contamination";
    case SubsetTag::RandomControl: return "random-control";
  }
  return "full";
}

std::string_view to_string(QuantileSide side) noexcept { return side == QuantileSide::Low ? "low" : "high"; }

QuantileSide parse_quantile_side(std::string_view name) {
  if (name == "low") return QuantileSide::Low;
  if (name == "high") return QuantileSide::High;
  throw Error(Errc::InvalidConfig, "quantile side must be 'low' or 'high', got '" + std::string(name) + "'");
}

DualStageSubsets dual_stage_subsets(const LabeledCorpus& corpus, const std::map<std::string, double>& ppl_scores,
                                    double q, std::uint64_t seed, QuantileSide side) {
  if (!(q > 0.0 && q < 1.0)) throw Error(Errc::InvalidConfig, "q must be in (0,1)");
  const std::size_t n = corpus.examples.size();
  std::vector<double> ppl(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = ppl_scores.find(corpus.examples[i].prompt_id);
    if (it == ppl_scores.end()) {
      throw Error(Errc::MissingScores, "no ppl score for prompt '" + corpus.examples[i].prompt_id + "'");
    }
    ppl[i] = it->second;
  }
  // Products like 0.3 * 10 land a hair above 3 in binary floating point.
  const std::size_t size =
      std::min(n, static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return side == QuantileSide::High ? ppl[a] > ppl[b] : ppl[a] < ppl[b];
  });
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
  std::sort(chosen.begin(), chosen.end());

  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  partial_shuffle(pool, size, rng);
  pool.resize(size);
  std::sort(pool.begin(), pool.end());

  DualStageSubsets out;
  for (std::size_t i : chosen) out.low_contamination.push_back(corpus.examples[i]);
  for (std::size_t i : pool) out.random_control.push_back(corpus.examples[i]);
  return out;
}

std::vector<MethodScores> group_scores(std::span<const corpus::ScoreRecord> records) {
  std::vector<MethodScores> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& m) { return m.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method, r.orientation, {}});
      it = std::prev(out.end());
    }
    if (it->orientation != r.orientation) {
      throw Error(Errc::InvalidConfig, "method '" + r.method + "' mixes orientations");
    }
    if (!it->by_prompt.emplace(r.prompt_id, r.score).second) {
      throw Error(Errc::InvalidConfig,
                  "method '" + r.method + "' scores prompt '" + r.prompt_id + "' twice (mixed sweep settings?)");
    }
  }
  return out;
}

std::vector<EvalReport> evaluate(const LabeledCorpus& corpus, std::span<const MethodScores> scores,
                                 std::span<const std::string> requested, SubsetTag subset) {
  std::vector<std::string> methods(requested.begin(), requested.end());
  for (const auto& s : scores) {
    if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
  }

  std::vector<EvalReport> reports;
  for (const auto& method : methods) {
    EvalReport report;
    report.method = method;
    report.subset = subset;
    const auto it = std::find_if(scores.begin(), scores.end(), [&](const auto& s) { return s.method == method; });
    if (it == scores.end() || it->by_prompt.empty()) {
      report.orientation = [&] {
        try {
          return detector::orientation_of(detector::parse_method(method));
        } catch (const Error&) {
          return Orientation::LowerMeansMember;
        }
      }();
      reports.push_back(std::move(report));
      continue;
    }
    report.orientation = it->orientation;
    std::vector<double> member;
    std::vector<double> nonmember;
    for (const auto& ex : corpus.examples) {
      const auto score = it->by_prompt.find(ex.prompt_id);
      if (score == it->by_prompt.end()) {
        throw Error(Errc::ScoreCoverageGap, "method '" + method + "' has no score for prompt '" + ex.prompt_id + "'");
      }
      (ex.label == Membership::Member ? member : nonmember).push_back(score->second);
      report.per_example.emplace_back(ex.prompt_id, score->second);
    }
    report.auc = roc_auc(member, nonmember, it->orientation);
    report.available = true;
    report.n_member = member.size();
    report.n_nonmember = nonmember.size();
    reports.push_back(std::move(report));
  }
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    if (a.available != b.available) return a.available;
    return a.available && a.auc > b.auc;
  });
  return reports;
}

nlohmann::json report_json(std::span<const EvalReport> reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j{{"method", r.method},
                     {"subset", to_string(r.subset)},
                     {"orientation", detector::to_string(r.orientation)},
                     {"available", r.available}};
    if (r.available) {
      j["auc"] = r.auc;
      j["n_member"] = r.n_member;
      j["n_nonmember"] = r.n_nonmember;
      nlohmann::json per = nlohmann::json::array();
      for (const auto& [id, score] : r.per_example) per.push_back({{"prompt_id", id}, {"score", score}});
      j["per_example"] = std::move(per);
    } else {
      j["auc"] = nullptr;
      j["status"] = "unavailable";
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string report_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-28s %-11s %8s %12s  %s\n", "method", "subset", "auc", "members",
                "non-members", "orientation");
  out << line;
  for (const auto& r : reports) {
    const std::string auc = r.available ? [&] {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", r.auc);
      return std::string(buf);
    }()
                                        : std::string("unavailable");
    std::snprintf(line, sizeof line, "%-16s %-28s %-11s %8zu %12zu  %s\n", r.method.c_str(),
                  std::string(to_string(r.subset)).c_str(), auc.c_str(), r.n_member, r.n_nonmember,
                  std::string(detector::to_string(r.orientation)).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace rlvrdetect::eval
