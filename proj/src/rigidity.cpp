#include "rlvrdetect/rigidity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "rlvrdetect/distance.hpp"
#include "rlvrdetect/diversity.hpp"
#include "rlvrdetect/error.hpp"

namespace rlvrdetect::rigidity {

namespace {

using Json = nlohmann::json;

// Joined n-grams of every order in `orders` occurring in one completion.
std::unordered_set<std::string> ngram_set(const std::vector<std::string>& tokens, const std::set<std::size_t>& orders) {
  std::unordered_set<std::string> out;
  for (std::size_t n : orders) {
    for (const auto& gram : diversity::extract_ngrams(tokens, n)) out.insert(diversity::join_ngram(gram));
  }
  return out;
}

std::set<std::size_t> orders_of(std::span<const std::string> ngrams) {
  std::set<std::size_t> orders;
  for (const auto& g : ngrams) {
    const std::size_t n = distance::split_tokens(g).size();
    if (n > 0) orders.insert(n);
  }
  return orders;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::Restatement: return "restatement";
    case Category::Logic: return "logic";
    case Category::Boilerplate: return "boilerplate";
    case Category::Other: return "other";
  }
  return "other";
}

std::optional<Category> parse_category(std::string_view name) noexcept {
  for (Category c : {Category::Restatement, Category::Logic, Category::Boilerplate, Category::Other}) {
    if (name == to_string(c)) return c;
  }
  return std::nullopt;
}

std::size_t support_threshold(std::size_t completion_count, const RigidOptions& options) {
  if (options.min_count) return *options.min_count;
  const double raw = options.min_fraction * static_cast<double>(completion_count);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

std::map<std::string, std::size_t> rigid_ngrams(std::span<const std::string> completions, const RigidOptions& options) {
  if (options.n == 0) throw Error(Errc::InvalidConfig, "n-gram order must be >= 1");
  if (!options.min_count && !(options.min_fraction > 0.0 && options.min_fraction <= 1.0)) {
    throw Error(Errc::InvalidConfig, "min_fraction must be in (0,1]");
  }
  std::unordered_map<std::string, std::size_t> support;
  for (const auto& completion : completions) {
    const auto tokens = diversity::tokenize(completion);
    for (const auto& gram : ngram_set(tokens, {options.n})) ++support[gram];
  }
  const std::size_t threshold = std::max<std::size_t>(1, support_threshold(completions.size(), options));
  std::map<std::string, std::size_t> out;
  for (auto& [gram, count] : support) {
    if (count >= threshold) out.emplace(gram, count);
  }
  return out;
}

std::vector<std::vector<bool>> presence_matrix(std::span<const std::string> completions,
                                               std::span<const std::string> ngrams) {
  const auto orders = orders_of(ngrams);
  std::vector<std::vector<bool>> rows(ngrams.size(), std::vector<bool>(completions.size(), false));
  for (std::size_t c = 0; c < completions.size(); ++c) {
    const auto grams = ngram_set(diversity::tokenize(completions[c]), orders);
    for (std::size_t r = 0; r < ngrams.size(); ++r) {
      rows[r][c] = grams.contains(distance::normalize_whitespace(ngrams[r]));
    }
  }
  return rows;
}

HttpChatClient::HttpChatClient(http::ClientOptions options, std::string model)
    : client_(std::move(options)), model_(std::move(model)) {}

std::string HttpChatClient::complete(const std::string& user_message) {
  const Json body{{"model", model_},
                  {"temperature", 0.0},
                  {"messages", Json::array({Json{{"role", "user"}, {"content", user_message}}})}};
  const Json reply = client_.post("/v1/chat/completions", body);
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::LabelerError, "chat reply from " + client_.base_url() + ": " + e.what());
  }
}

std::string HttpChatClient::id() const { return "chat:" + client_.base_url() + "#" + model_; }

const std::string& labeling_task_text() {
  static const std::string text =
      "You will be given: (1) a problem statement, (2) one sample model answer for that problem, and (3) a "
      "list of n-grams extracted from multiple model answers to the same problem. Your job is to label EACH "
      "n-gram with exactly one category from: restatement, logic, boilerplate, other.\n"
      "\n"
      "Labeling rules:\n"
      "1) restatement: the n-gram repeats or paraphrases the problem statement. If the n-gram appears verbatim "
      "in the problem statement, it MUST be labeled restatement.\n"
      "2) logic: the n-gram expresses problem-specific reasoning, math relations, formulas, constraints, or "
      "derived quantities.\n"
      "3) boilerplate: generic reasoning template language (e.g., 'we need to', 'let us', 'therefore', 'in "
      "conclusion'), or domain-agnostic filler.\n"
      "4) other: everything else that does not fit the above.\n"
      "\n"
      "Important:\n"
      "- Use the problem statement and the sample answer as context.\n"
      "- The sample answer includes inline markers [...] around matching n-grams.\n"
      "- Do not invent new n-grams or change the provided strings.\n"
      "- Output ONLY a JSON object mapping each input n-gram to one of the labels.\n"
      "- Include all n-grams, even if uncertain.\n"
      "- Keep the n-gram strings exactly as given.";
  return text;
}

std::string annotate_answer(std::string_view answer, std::span<const std::string> ngrams) {
  const auto tokens = diversity::tokenize(answer);
  std::map<std::size_t, std::unordered_set<std::string>> by_order;
  for (const auto& g : ngrams) {
    const auto parts = diversity::tokenize(g);
    if (!parts.empty()) by_order[parts.size()].insert(diversity::join_ngram(parts));
  }
  std::vector<bool> marked(tokens.size(), false);
  for (const auto& [n, grams] : by_order) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      const std::span<const std::string> window(tokens.data() + i, n);
      if (grams.contains(diversity::join_ngram(window))) std::fill_n(marked.begin() + i, n, true);
    }
  }
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    if (marked[i] && (i == 0 || !marked[i - 1])) out.push_back('[');
    out += tokens[i];
    if (marked[i] && (i + 1 == tokens.size() || !marked[i + 1])) out.push_back(']');
  }
  return out;
}

Json labeling_request(std::string_view problem, std::string_view sample_answer, std::span<const std::string> ngrams) {
  return Json{{"task", labeling_task_text()},
              {"problem", problem},
              {"sample_answer", annotate_answer(sample_answer, ngrams)},
              {"ngrams", ngrams}};
}

LabelResult parse_label_reply(std::string_view reply, std::span<const std::string> ngrams) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw Error(Errc::LabelerError, "reply contains no JSON object");
  }
  Json object;
  try {
    object = Json::parse(reply.substr(open, close - open + 1));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::LabelerError, std::string("reply is not valid JSON: ") + e.what());
  }
  if (!object.is_object()) throw Error(Errc::LabelerError, "reply is not a JSON object");

  LabelResult result;
  for (const auto& gram : ngrams) {
    std::optional<Category> category;
    if (auto it = object.find(gram); it != object.end() && it->is_string()) {
      category = parse_category(it->get<std::string>());
    }
    if (!category) result.flagged.push_back(gram);
    result.categories[gram] = category.value_or(Category::Other);
  }
  return result;
}

LabelResult label_ngrams(std::string_view problem, std::string_view sample_answer, std::span<const std::string> ngrams,
                         ChatClient& labeler, std::size_t max_attempts) {
  if (ngrams.empty()) throw Error(Errc::InvalidConfig, "no n-grams to label");
  const std::string message = labeling_request(problem, sample_answer, ngrams).dump(2);
  std::string last_error;
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, max_attempts); ++attempt) {
    std::string reply;
    try {
      reply = labeler.complete(message);
    } catch (const Error& e) {
      // The HTTP layer has already spent its own retry budget.
      if (e.code() == Errc::LabelerError) throw;
      throw Error(Errc::LabelerError, e.what());
    }
    try {
      return parse_label_reply(reply, ngrams);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(Errc::LabelerError, "no parseable reply after " + std::to_string(max_attempts) +
                                      " attempts: " + last_error);
}

std::string_view to_string(Linkage l) noexcept {
  switch (l) {
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
  }
  return "average";
}

std::string_view to_string(SetMetric m) noexcept { return m == SetMetric::Jaccard ? "jaccard" : "hamming"; }

Linkage parse_linkage(std::string_view name) {
  for (Linkage l : {Linkage::Average, Linkage::Single, Linkage::Complete}) {
    if (name == to_string(l)) return l;
  }
  throw Error(Errc::InvalidConfig, "unknown linkage '" + std::string(name) + "'");
}

SetMetric parse_set_metric(std::string_view name) {
  if (name == "jaccard") return SetMetric::Jaccard;
  if (name == "hamming") return SetMetric::Hamming;
  throw Error(Errc::InvalidConfig, "unknown metric '" + std::string(name) + "'");
}

double set_distance(const std::vector<bool>& a, const std::vector<bool>& b, SetMetric metric) {
  std::size_t both = 0;
  std::size_t either = 0;
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    both += a[i] && b[i];
    either += a[i] || b[i];
    differ += a[i] != b[i];
  }
  if (metric == SetMetric::Hamming) {
    return a.empty() ? 0.0 : static_cast<double>(differ) / static_cast<double>(a.size());
  }
  if (either == 0) return 0.0;
  return 1.0 - static_cast<double>(both) / static_cast<double>(either);
}

ClusterResult cluster_presence(const std::vector<std::vector<bool>>& features, const ClusterOptions& options) {
  const std::size_t m = features.size();
  ClusterResult result;
  if (m == 0) return result;

  // Identical rows always share a cluster; cluster the distinct rows only.
  std::map<std::vector<bool>, std::size_t> unique_index;
  std::vector<std::vector<bool>> unique_rows;
  std::vector<std::size_t> row_of(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto [it, inserted] = unique_index.try_emplace(features[i], unique_rows.size());
    if (inserted) unique_rows.push_back(features[i]);
    row_of[i] = it->second;
  }
  if (unique_rows.size() < m) {
    const auto inner = cluster_presence(unique_rows, options);
    std::unordered_map<std::size_t, std::size_t> label;
    result.assignment.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      auto [it, inserted] = label.try_emplace(inner.assignment[row_of[i]], label.size());
      result.assignment[i] = it->second;
    }
    result.cluster_count = inner.cluster_count;
    return result;
  }

  std::vector<std::vector<double>> dist(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) dist[i][j] = dist[j][i] = set_distance(features[i], features[j], options.metric);
  }

  // Ties between candidate merges are broken on cluster content rather than
  // index, so relabeling the input yields the same partition.
  std::vector<std::string> point_keys(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (bool bit : features[i]) point_keys[i].push_back(bit ? '1' : '0');
  }
  std::vector<std::vector<std::size_t>> members(m);
  std::vector<std::string> cluster_keys(m);
  for (std::size_t i = 0; i < m; ++i) {
    members[i] = {i};
    cluster_keys[i] = point_keys[i];
  }
  std::vector<bool> active(m, true);
  constexpr double kTieEps = 1e-12;

  while (true) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = m, bj = m;
    std::pair<std::string_view, std::string_view> best_key;
    for (std::size_t i = 0; i < m; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < m; ++j) {
        if (!active[j]) continue;
        const double d = dist[i][j];
        const std::string_view ki = cluster_keys[i];
        const std::string_view kj = cluster_keys[j];
        const auto key = ki < kj ? std::pair{ki, kj} : std::pair{kj, ki};
        if (d < best - kTieEps || (d <= best + kTieEps && key < best_key)) {
          best = std::min(best, d);
          bi = i;
          bj = j;
          best_key = key;
        }
      }
    }
    if (bi == m || best > options.threshold + kTieEps) break;

    const double wi = static_cast<double>(members[bi].size());
    const double wj = static_cast<double>(members[bj].size());
    for (std::size_t k = 0; k < m; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      double merged = 0.0;
      switch (options.linkage) {
        case Linkage::Average: merged = (wi * dist[bi][k] + wj * dist[bj][k]) / (wi + wj); break;
        case Linkage::Single: merged = std::min(dist[bi][k], dist[bj][k]); break;
        case Linkage::Complete: merged = std::max(dist[bi][k], dist[bj][k]); break;
      }
      dist[bi][k] = dist[k][bi] = merged;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    active[bj] = false;
    std::vector<std::string> keys;
    for (std::size_t p : members[bi]) keys.push_back(point_keys[p]);
    std::sort(keys.begin(), keys.end());
    cluster_keys[bi].clear();
    for (const auto& k : keys) cluster_keys[bi] += k + "|";
  }

  std::vector<std::size_t> root(m);
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t p : members[c]) root[p] = c;
  }
  std::unordered_map<std::size_t, std::size_t> label;
  result.assignment.resize(m);
  for (std::size_t p = 0; p < m; ++p) {
    auto [it, inserted] = label.try_emplace(root[p], label.size());
    result.assignment[p] = it->second;
  }
  result.cluster_count = label.size();
  return result;
}

ClusterResult structure_clusters(std::span<const std::string> completions, std::span<const std::string> logic_ngrams,
                                 const ClusterOptions& options) {
  const std::size_t m = completions.size();
  if (logic_ngrams.empty()) {
    ClusterResult result;
    result.cluster_count = m;
    result.assignment.resize(m);
    for (std::size_t i = 0; i < m; ++i) result.assignment[i] = i;
    result.degenerate = true;
    return result;
  }
  const auto rows = presence_matrix(completions, logic_ngrams);
  std::vector<std::vector<bool>> features(m, std::vector<bool>(logic_ngrams.size(), false));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < m; ++c) features[c][r] = rows[r][c];
  }
  return cluster_presence(features, options);
}

void to_json(Json& j, const RigidityProfile& p) {
  Json categories = Json::object();
  for (const auto& [gram, c] : p.categories) categories[gram] = to_string(c);
  Json presence = Json::array();
  for (const auto& row : p.co_occurrence) {
    Json r = Json::array();
    for (bool b : row) r.push_back(b ? 1 : 0);
    presence.push_back(std::move(r));
  }
  j = {{"kind", "rigidity"},
       {"prompt_id", p.prompt_id},
       {"n", p.extraction.n},
       {"min_fraction", p.extraction.min_fraction},
       {"min_count", p.extraction.min_count ? Json(*p.extraction.min_count) : Json(nullptr)},
       {"completion_count", p.completion_count},
       {"rigid_ngrams", p.rigid_ngrams},
       {"categories", categories},
       {"flagged", p.flagged},
       {"labeler_id", p.labeler_id},
       {"cluster_features", p.cluster_features},
       {"linkage", to_string(p.clustering.linkage)},
       {"metric", to_string(p.clustering.metric)},
       {"cut_threshold", p.clustering.threshold},
       {"cluster_count", p.cluster_count},
       {"cluster_assignment", p.cluster_assignment},
       {"degenerate", p.degenerate},
       {"co_occurrence", {{"ngrams", p.co_occurrence_ngrams}, {"presence", presence}}}};
}

void from_json(const Json& j, RigidityProfile& p) {
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.extraction.n = j.at("n").get<std::size_t>();
  p.extraction.min_fraction = j.value("min_fraction", 0.5);
  p.extraction.min_count.reset();
  if (auto it = j.find("min_count"); it != j.end() && !it->is_null()) p.extraction.min_count = it->get<std::size_t>();
  p.completion_count = j.value("completion_count", std::size_t{0});
  p.rigid_ngrams = j.at("rigid_ngrams").get<std::map<std::string, std::size_t>>();
  p.categories.clear();
  const auto categories = j.value("categories", Json::object());
  for (const auto& [gram, label] : categories.items()) {
    p.categories[gram] = parse_category(label.get<std::string>()).value_or(Category::Other);
  }
  p.flagged = j.value("flagged", std::vector<std::string>{});
  p.labeler_id = j.value("labeler_id", std::string{});
  p.cluster_features = j.value("cluster_features", std::string{});
  p.clustering.linkage = parse_linkage(j.value("linkage", std::string("average")));
  p.clustering.metric = parse_set_metric(j.value("metric", std::string("jaccard")));
  p.clustering.threshold = j.value("cut_threshold", 0.5);
  p.cluster_count = j.at("cluster_count").get<std::size_t>();
  p.cluster_assignment = j.at("cluster_assignment").get<std::vector<std::size_t>>();
  p.degenerate = j.value("degenerate", false);
  p.co_occurrence_ngrams.clear();
  p.co_occurrence.clear();
  if (auto it = j.find("co_occurrence"); it != j.end()) {
    p.co_occurrence_ngrams = it->at("ngrams").get<std::vector<std::string>>();
    for (const auto& row : it->at("presence")) {
      std::vector<bool> r;
      for (const auto& b : row) r.push_back(b.get<int>() != 0);
      p.co_occurrence.push_back(std::move(r));
    }
  }
}

RigidityProfile build_profile(const std::string& prompt_id, std::string_view problem,
                              std::span<const std::string> completions, const RigidityOptions& options,
                              ChatClient* labeler) {
  RigidityProfile profile;
  profile.prompt_id = prompt_id;
  profile.extraction = options.extraction;
  profile.clustering = options.clustering;
  profile.completion_count = completions.size();
  profile.rigid_ngrams = rigid_ngrams(completions, options.extraction);

  std::vector<std::string> grams;
  grams.reserve(profile.rigid_ngrams.size());
  for (const auto& [gram, support] : profile.rigid_ngrams) grams.push_back(gram);

  if (labeler != nullptr && !grams.empty()) {
    const std::string sample = completions.empty() ? std::string{} : completions.front();
    auto labels = label_ngrams(problem, sample, grams, *labeler, options.labeler_attempts);
    profile.categories = std::move(labels.categories);
    profile.flagged = std::move(labels.flagged);
    profile.labeler_id = labeler->id();
  }

  std::vector<std::string> features;
  if (labeler != nullptr && !options.cluster_on_all_rigid) {
    profile.cluster_features = "logic";
    for (const auto& [gram, c] : profile.categories) {
      if (c == Category::Logic) features.push_back(gram);
    }
  } else {
    profile.cluster_features = "all-rigid";
    features = grams;
  }
  const auto clusters = structure_clusters(completions, features, options.clustering);
  profile.cluster_count = clusters.cluster_count;
  profile.cluster_assignment = clusters.assignment;
  profile.degenerate = clusters.degenerate;

  profile.co_occurrence_ngrams = grams;
  profile.co_occurrence = presence_matrix(completions, grams);
  return profile;
}

void write_co_occurrence_csv(const RigidityProfile& profile, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IOError, "cannot write " + path.string());
  out << "ngram,category";
  for (std::size_t c = 0; c < profile.completion_count; ++c) out << ",c" << c;
  out << '\n';
  for (std::size_t r = 0; r < profile.co_occurrence_ngrams.size(); ++r) {
    const auto& gram = profile.co_occurrence_ngrams[r];
    const auto cat = profile.categories.find(gram);
    out << csv_field(gram) << ',' << (cat == profile.categories.end() ? "" : to_string(cat->second));
    for (bool b : profile.co_occurrence[r]) out << ',' << (b ? 1 : 0);
    out << '\n';
  }
  if (!out) throw Error(Errc::IOError, "write failed for " + path.string());
}

ClusterHistogram cluster_histogram(std::span<const std::size_t> cluster_counts) {
  if (cluster_counts.empty()) throw Error(Errc::EmptyInput, "no profiles to histogram");
  ClusterHistogram h;
  h.prompts = cluster_counts.size();
  for (std::size_t c : cluster_counts) ++h.counts[c];
  for (std::size_t threshold : kHistogramThresholds) {
    const auto le = std::count_if(cluster_counts.begin(), cluster_counts.end(),
                                  [&](std::size_t c) { return c <= threshold; });
    h.cumulative.emplace_back(threshold, static_cast<double>(le) / static_cast<double>(h.prompts));
  }
  return h;
}

ClusterHistogram cluster_histogram(std::span<const RigidityProfile> profiles) {
  std::vector<std::size_t> counts;
  counts.reserve(profiles.size());
  for (const auto& p : profiles) counts.push_back(p.cluster_count);
  return cluster_histogram(counts);
}

}  // namespace rlvrdetect::rigidity
