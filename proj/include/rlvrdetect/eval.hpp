#pragma once

// Threshold-free evaluation (ROC AUC) of detector scores over a labeled
// corpus, and the dual-stage subset selection.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlvrdetect/corpus.hpp"
#include "rlvrdetect/detector.hpp"

namespace rlvrdetect::eval {

using detector::Membership;
using detector::Orientation;

struct LabeledExample {
  std::string prompt_id;
  std::string prompt_text;
  Membership label = Membership::NonMember;
  std::string source;
};

struct LabeledCorpus {
  std::vector<LabeledExample> examples;

  /// Throws UnlabeledPrompt naming the first record without a label and
  /// DuplicateId on repeated ids.
  static LabeledCorpus from_prompts(std::span<const corpus::PromptRecord> prompts);

  std::size_t member_count() const noexcept;
  std::size_t nonmember_count() const noexcept;
};

/// P(member ranked above non-member) with ties credited 1/2. Scores are
/// negated first when lower means member. Rank-based, O(n log n), exact
/// integer pair counting.
double roc_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores,
               Orientation orientation);

enum class SubsetTag { Full, LowPretrainContamination, RandomControl };
std::string_view to_string(SubsetTag tag) noexcept;

// Which PPL tail forms the low-contamination subset. High PPL means weak
// memorization under the perplexity convention.
enum class QuantileSide { Low, High };
std::string_view to_string(QuantileSide side) noexcept;
QuantileSide parse_quantile_side(std::string_view name);

struct DualStageSubsets {
  std::vector<LabeledExample> low_contamination;
  std::vector<LabeledExample> random_control;
};

/// ceil(q * N) examples from the chosen PPL tail, plus a seeded uniform
/// control sample of the same size. Both keep corpus order.
DualStageSubsets dual_stage_subsets(const LabeledCorpus& corpus, const std::map<std::string, double>& ppl_scores,
                                    double q, std::uint64_t seed, QuantileSide side = QuantileSide::High);

struct MethodScores {
  std::string method;
  Orientation orientation = Orientation::LowerMeansMember;
  std::map<std::string, double> by_prompt;
};

/// Groups score records by method. Throws InvalidConfig if one method mixes
/// orientations or repeats a prompt.
std::vector<MethodScores> group_scores(std::span<const corpus::ScoreRecord> records);

struct EvalReport {
  std::string method;
  bool available = false;
  double auc = 0.0;
  std::size_t n_member = 0;
  std::size_t n_nonmember = 0;
  Orientation orientation = Orientation::LowerMeansMember;
  SubsetTag subset = SubsetTag::Full;
  std::vector<std::pair<std::string, double>> per_example;
};

/// One report per method in `requested` (methods with no scores are marked
/// unavailable) followed by any other scored method. Sorted by AUC, highest
/// first, unavailable last. Throws ScoreCoverageGap naming the first corpus
/// prompt a scored method lacks.
std::vector<EvalReport> evaluate(const LabeledCorpus& corpus, std::span<const MethodScores> scores,
                                 std::span<const std::string> requested = {}, SubsetTag subset = SubsetTag::Full);

nlohmann::json report_json(std::span<const EvalReport> reports);
std::string report_table(std::span<const EvalReport> reports);

}  // namespace rlvrdetect::eval
