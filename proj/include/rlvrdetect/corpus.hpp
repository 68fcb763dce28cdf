#pragma once

// Record types shared by every pipeline stage and their JSONL persistence.
// Each line of a file is one JSON object carrying `"schema": 1`.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rlvrdetect/detector.hpp"
#include "rlvrdetect/error.hpp"

namespace rlvrdetect::corpus {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct PromptRecord {
  std::string id;
  std::string prompt;
  std::optional<detector::Membership> label;
  std::optional<std::string> source;
  // Free-form; unknown top-level fields of an input line land here too.
  Json meta = Json::object();

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct ScoreRecord {
  std::string prompt_id;
  std::string method;
  double score = 0.0;
  detector::Orientation orientation = detector::Orientation::LowerMeansMember;
  std::optional<std::size_t> k_used;
  std::size_t m_used = 0;
  std::string config_fingerprint;
  std::optional<detector::Membership> decision;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// All sampled completions for one prompt under one decoding configuration.
struct CompletionSet {
  std::string prompt_id;
  std::string prompt_text;
  std::string model_name;
  std::string config_fingerprint;
  std::size_t n_requested = 0;
  std::vector<std::string> completions;
  // Per-completion token logprobs, when requested.
  std::optional<std::vector<std::vector<double>>> logprobs;
  // Token logprobs of the prompt text itself (input to ppl / min-k-percent).
  std::optional<std::vector<double>> prompt_logprobs;
  std::optional<std::string> greedy;
  std::string created_at;
  // True where the completion stopped on the max_tokens limit.
  std::vector<bool> truncated_flags;
  bool partial = false;
  std::optional<std::string> error;

  friend bool operator==(const CompletionSet&, const CompletionSet&) = default;
};

void to_json(Json& j, const PromptRecord& r);
void from_json(const Json& j, PromptRecord& r);
void to_json(Json& j, const ScoreRecord& r);
void from_json(const Json& j, ScoreRecord& r);
void to_json(Json& j, const CompletionSet& r);
void from_json(const Json& j, CompletionSet& r);

struct JsonLine {
  std::size_t line_number = 0;
  Json value;
};

/// Parses one object per non-empty line. Throws ParseError naming the line,
/// SchemaVersion for records newer than this build, IOError if unreadable.
std::vector<JsonLine> read_jsonl(const std::filesystem::path& path);

/// Writes via temp file + rename under an exclusive advisory lock.
void write_jsonl(const std::filesystem::path& path, std::span<const Json> lines);

/// Appends one line under an exclusive advisory lock.
void append_jsonl(const std::filesystem::path& path, const std::string& line);

/// Serializes a record to its canonical single-line form, schema tag included.
template <class Record>
std::string to_jsonl_line(const Record& record) {
  Json j = record;
  j["schema"] = kSchemaVersion;
  return j.dump();
}

namespace detail {
inline const std::string* record_id(const PromptRecord& r) { return &r.id; }
template <class Record>
const std::string* record_id(const Record&) {
  return nullptr;
}
}  // namespace detail

template <class Record>
std::vector<Record> load_jsonl(const std::filesystem::path& path) {
  std::vector<Record> out;
  std::unordered_set<std::string> seen;
  for (auto& [line, value] : read_jsonl(path)) {
    Record record;
    try {
      record = value.template get<Record>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(line) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() != Errc::ParseError) throw;
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (const std::string* id = detail::record_id(record)) {
      if (id->empty()) throw Error(Errc::ParseError, path.string() + ":" + std::to_string(line) + ": empty id");
      if (!seen.insert(*id).second) {
        throw Error(Errc::DuplicateId, "id '" + *id + "' repeated at " + path.string() + ":" + std::to_string(line));
      }
    }
    out.push_back(std::move(record));
  }
  return out;
}

template <class Record>
void save_jsonl(std::span<const Record> records, const std::filesystem::path& path) {
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    Json j = r;
    j["schema"] = kSchemaVersion;
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

template <class Record>
void save_jsonl(const std::vector<Record>& records, const std::filesystem::path& path) {
  save_jsonl(std::span<const Record>(records), path);
}

/// Current UTC time as ISO-8601 with a trailing Z.
std::string utc_timestamp();

}  // namespace rlvrdetect::corpus
