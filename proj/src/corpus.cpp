#include "rlvrdetect/corpus.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace rlvrdetect::corpus {

namespace {

template <class T>
void put_optional(Json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

template <class T>
std::optional<T> get_optional(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->template get<T>();
}

// Exclusive flock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& target) {
    const std::string lock_path = target.string() + ".lock";
    fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(Errc::IOError, "cannot open lock file " + lock_path);
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error(Errc::IOError, "cannot lock " + lock_path);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
};

}  // namespace

void to_json(Json& j, const PromptRecord& r) {
  j = Json{{"id", r.id}, {"prompt", r.prompt}};
  if (r.label) j["label"] = std::string(detector::to_string(*r.label));
  put_optional(j, "source", r.source);
  if (!r.meta.empty()) j["meta"] = r.meta;
}

void from_json(const Json& j, PromptRecord& r) {
  if (!j.is_object()) throw Error(Errc::ParseError, "prompt record must be a JSON object");
  r.id = j.at("id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.label.reset();
  if (auto label = get_optional<std::string>(j, "label")) r.label = detector::parse_membership(*label);
  r.source = get_optional<std::string>(j, "source");
  r.meta = j.contains("meta") ? j.at("meta") : Json::object();
  if (!r.meta.is_object()) throw Error(Errc::ParseError, "meta must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "id" || key == "prompt" || key == "label" || key == "source" || key == "meta" || key == "schema") {
      continue;
    }
    r.meta[key] = value;
  }
}

void to_json(Json& j, const ScoreRecord& r) {
  j = Json{{"prompt_id", r.prompt_id},
           {"method", r.method},
           {"score", r.score},
           {"orientation", std::string(detector::to_string(r.orientation))},
           {"m_used", r.m_used},
           {"config_fingerprint", r.config_fingerprint}};
  put_optional(j, "k_used", r.k_used);
  if (r.decision) j["decision"] = std::string(detector::to_string(*r.decision));
}

void from_json(const Json& j, ScoreRecord& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.score = j.at("score").get<double>();
  r.orientation = detector::parse_orientation(j.at("orientation").get<std::string>());
  r.m_used = j.at("m_used").get<std::size_t>();
  r.config_fingerprint = j.value("config_fingerprint", std::string{});
  r.k_used = get_optional<std::size_t>(j, "k_used");
  r.decision.reset();
  if (auto d = get_optional<std::string>(j, "decision")) r.decision = detector::parse_membership(*d);
}

void to_json(Json& j, const CompletionSet& r) {
  j = Json{{"prompt_id", r.prompt_id},
           {"prompt_text", r.prompt_text},
           {"model_name", r.model_name},
           {"config_fingerprint", r.config_fingerprint},
           {"n_requested", r.n_requested},
           {"completions", r.completions},
           {"created_at", r.created_at},
           {"truncated_flags", r.truncated_flags},
           {"partial", r.partial}};
  put_optional(j, "logprobs", r.logprobs);
  put_optional(j, "prompt_logprobs", r.prompt_logprobs);
  put_optional(j, "greedy", r.greedy);
  put_optional(j, "error", r.error);
}

void from_json(const Json& j, CompletionSet& r) {
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.prompt_text = j.value("prompt_text", std::string{});
  r.model_name = j.value("model_name", std::string{});
  r.config_fingerprint = j.value("config_fingerprint", std::string{});
  r.completions = j.at("completions").get<std::vector<std::string>>();
  r.n_requested = j.value("n_requested", r.completions.size());
  r.created_at = j.value("created_at", std::string{});
  r.truncated_flags = j.value("truncated_flags", std::vector<bool>(r.completions.size(), false));
  r.partial = j.value("partial", false);
  r.logprobs = get_optional<std::vector<std::vector<double>>>(j, "logprobs");
  r.prompt_logprobs = get_optional<std::vector<double>>(j, "prompt_logprobs");
  r.greedy = get_optional<std::string>(j, "greedy");
  r.error = get_optional<std::string>(j, "error");
}

std::vector<JsonLine> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOError, "cannot read " + path.string());
  std::vector<JsonLine> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json value;
    try {
      value = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    if (!value.is_object()) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(number) + ": expected a JSON object");
    }
    if (auto it = value.find("schema"); it != value.end()) {
      if (!it->is_number_integer()) {
        throw Error(Errc::ParseError, path.string() + ":" + std::to_string(number) + ": schema must be an integer");
      }
      if (it->get<int>() > kSchemaVersion) {
        throw Error(Errc::SchemaVersion, path.string() + ":" + std::to_string(number) + ": schema " +
                                             std::to_string(it->get<int>()) + " is newer than supported " +
                                             std::to_string(kSchemaVersion));
      }
    }
    out.push_back({number, std::move(value)});
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Json> lines) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  FileLock lock(path);
  const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IOError, "cannot write " + tmp.string());
    for (const auto& j : lines) out << j.dump() << '\n';
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw Error(Errc::IOError, "write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::IOError, "cannot replace " + path.string());
  }
}

void append_jsonl(const std::filesystem::path& path, const std::string& line) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  FileLock lock(path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::IOError, "cannot append to " + path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw Error(Errc::IOError, "append failed for " + path.string());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace rlvrdetect::corpus
