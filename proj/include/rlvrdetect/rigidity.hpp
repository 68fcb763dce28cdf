#pragma once

// Rigid n-grams (n-grams shared by many completions of one prompt), their
// categorization through a chat labeler, and clustering of completions into
// reasoning-structure modes.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlvrdetect/http.hpp"

namespace rlvrdetect::rigidity {

enum class Category { Restatement, Logic, Boilerplate, Other };
std::string_view to_string(Category c) noexcept;
std::optional<Category> parse_category(std::string_view name) noexcept;

struct RigidOptions {
  std::size_t n = 3;
  double min_fraction = 0.5;
  // Absolute support threshold; overrides min_fraction when set.
  std::optional<std::size_t> min_count;
};

/// Support threshold ceil(min_fraction * m), or min_count when set.
std::size_t support_threshold(std::size_t completion_count, const RigidOptions& options);

/// n-grams (space-joined) present in at least the threshold number of
/// completions, each completion counted once.
std::map<std::string, std::size_t> rigid_ngrams(std::span<const std::string> completions,
                                                const RigidOptions& options = {});

/// Rows are n-grams, columns completions; true where the n-gram occurs.
std::vector<std::vector<bool>> presence_matrix(std::span<const std::string> completions,
                                               std::span<const std::string> ngrams);

// --- labeling -------------------------------------------------------------

/// A chat endpoint that answers one user message.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::string& user_message) = 0;
  virtual std::string id() const = 0;
};

/// POST {base_url}/v1/chat/completions, temperature 0, single user message.
class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(http::ClientOptions options, std::string model);
  std::string complete(const std::string& user_message) override;
  std::string id() const override;

 private:
  http::JsonClient client_;
  std::string model_;
};

/// Instruction text of the labeling request, verbatim.
const std::string& labeling_task_text();

/// Wraps every token span matching one of the n-grams in [ ... ]. Overlapping
/// or adjacent matches share one bracket pair.
std::string annotate_answer(std::string_view answer, std::span<const std::string> ngrams);

/// {"task", "problem", "sample_answer", "ngrams"} as sent to the labeler.
nlohmann::json labeling_request(std::string_view problem, std::string_view sample_answer,
                                std::span<const std::string> ngrams);

struct LabelResult {
  std::map<std::string, Category> categories;
  // n-grams missing from the reply or carrying an unknown label; set to Other.
  std::vector<std::string> flagged;
};

/// Parses the labeler reply (a JSON object, optionally inside a code fence).
/// Throws LabelerError when no JSON object can be found.
LabelResult parse_label_reply(std::string_view reply, std::span<const std::string> ngrams);

/// Sends the request and parses the reply; unparseable replies are retried
/// `max_attempts` times before LabelerError.
LabelResult label_ngrams(std::string_view problem, std::string_view sample_answer,
                         std::span<const std::string> ngrams, ChatClient& labeler, std::size_t max_attempts = 3);

// --- clustering -----------------------------------------------------------

enum class Linkage { Average, Single, Complete };
enum class SetMetric { Jaccard, Hamming };
std::string_view to_string(Linkage l) noexcept;
std::string_view to_string(SetMetric m) noexcept;
Linkage parse_linkage(std::string_view name);
SetMetric parse_set_metric(std::string_view name);

struct ClusterOptions {
  Linkage linkage = Linkage::Average;
  SetMetric metric = SetMetric::Jaccard;
  // Merges happen while the closest pair is at distance <= threshold.
  double threshold = 0.5;
};

struct ClusterResult {
  std::size_t cluster_count = 0;
  // Contiguous from 0, numbered by first appearance.
  std::vector<std::size_t> assignment;
  // No features were available; every completion is its own cluster.
  bool degenerate = false;
};

/// Distance between two presence rows; two empty sets are at distance 0.
double set_distance(const std::vector<bool>& a, const std::vector<bool>& b, SetMetric metric);

/// Agglomerative clustering of binary feature vectors (one per completion).
ClusterResult cluster_presence(const std::vector<std::vector<bool>>& features, const ClusterOptions& options = {});

/// Clusters completions by which of `logic_ngrams` they contain.
ClusterResult structure_clusters(std::span<const std::string> completions, std::span<const std::string> logic_ngrams,
                                 const ClusterOptions& options = {});

// --- profiles -------------------------------------------------------------

struct RigidityProfile {
  std::string prompt_id;
  RigidOptions extraction;
  std::size_t completion_count = 0;
  std::map<std::string, std::size_t> rigid_ngrams;
  std::map<std::string, Category> categories;
  std::vector<std::string> flagged;
  std::string labeler_id;
  // "logic" or "all-rigid".
  std::string cluster_features;
  ClusterOptions clustering;
  std::size_t cluster_count = 0;
  std::vector<std::size_t> cluster_assignment;
  bool degenerate = false;
  // Row order follows `co_occurrence_ngrams`.
  std::vector<std::string> co_occurrence_ngrams;
  std::vector<std::vector<bool>> co_occurrence;
};

void to_json(nlohmann::json& j, const RigidityProfile& p);
void from_json(const nlohmann::json& j, RigidityProfile& p);

struct RigidityOptions {
  RigidOptions extraction;
  ClusterOptions clustering;
  // Cluster on every rigid n-gram instead of the logic-labeled ones.
  bool cluster_on_all_rigid = false;
  std::size_t labeler_attempts = 3;
};

/// Without a labeler, categories stay empty and clustering uses all rigid n-grams.
RigidityProfile build_profile(const std::string& prompt_id, std::string_view problem,
                              std::span<const std::string> completions, const RigidityOptions& options,
                              ChatClient* labeler);

/// Writes the n-gram x completion presence matrix as CSV.
void write_co_occurrence_csv(const RigidityProfile& profile, const std::filesystem::path& path);

struct ClusterHistogram {
  std::map<std::size_t, std::size_t> counts;  // cluster_count -> prompts
  std::vector<std::pair<std::size_t, double>> cumulative;  // (threshold, fraction of prompts <= threshold)
  std::size_t prompts = 0;
};

inline constexpr std::size_t kHistogramThresholds[] = {2, 4, 8, 16};

/// Throws EmptyInput when there is nothing to count.
ClusterHistogram cluster_histogram(std::span<const std::size_t> cluster_counts);
ClusterHistogram cluster_histogram(std::span<const RigidityProfile> profiles);

}  // namespace rlvrdetect::rigidity
