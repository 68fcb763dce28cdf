#include "rlvrdetect/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "rlvrdetect/corpus.hpp"
#include "rlvrdetect/detector.hpp"
#include "rlvrdetect/diversity.hpp"
#include "rlvrdetect/error.hpp"
#include "rlvrdetect/eval.hpp"
#include "rlvrdetect/hash.hpp"
#include "rlvrdetect/rigidity.hpp"
#include "rlvrdetect/sampler.hpp"
#include "rlvrdetect/stub_server.hpp"
#include "rlvrdetect/synthetic.hpp"

#ifndef RLVRDETECT_VERSION
#define RLVRDETECT_VERSION "0.0.0"
#endif

namespace rlvrdetect::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::InvalidConfig, what + ": '" + text + "' is not a number");
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used == text.size() && text.find('-') == std::string::npos) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw Error(Errc::InvalidConfig, what + ": '" + text + "' is not a non-negative integer");
}

struct Sweep {
  std::string key;
  std::vector<std::string> values;
};

std::optional<Sweep> parse_sweep(const std::string& text, const std::set<std::string>& allowed) {
  if (text.empty()) return std::nullopt;
  const auto eq = text.find('=');
  Sweep sweep{trim(text.substr(0, eq)), {}};
  if (!allowed.contains(sweep.key)) {
    std::string keys;
    for (const auto& k : allowed) keys += (keys.empty() ? "" : ", ") + k;
    throw Error(Errc::InvalidConfig, "--sweep key '" + sweep.key + "' not supported here (use " + keys + ")");
  }
  if (eq != std::string::npos) sweep.values = split_list(text.substr(eq + 1));
  if (sweep.values.empty()) throw Error(Errc::InvalidConfig, "--sweep needs values, e.g. " + sweep.key + "=2,4,8");
  return sweep;
}

std::string sanitize(std::string_view id) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
  return out.empty() ? "_" : out;
}

// Runs f(i) for i in [0, n) on up to `threads` workers. f must not throw.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < n;) f(i);
  };
  if (threads == 1) {
    work();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
}

Json effective_config(const CLI::App& sub) {
  Json config = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || name.empty()) continue;
    const std::string key = name.substr(name.find_first_not_of('-'));
    if (opt->count() > 0) {
      config[key] = opt->results().back();
    } else {
      config[key] = opt->get_default_str();
    }
  }
  return config;
}

void write_manifest(const fs::path& output, const CLI::App& sub, const std::vector<fs::path>& inputs) {
  Json hashes = Json::object();
  for (const auto& p : inputs) hashes[p.string()] = sha256_file(p);
  const Json manifest{{"tool", "rlvrdetect"},
                      {"version", RLVRDETECT_VERSION},
                      {"command", sub.get_name()},
                      {"config", effective_config(sub)},
                      {"inputs", hashes}};
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  const fs::path path = output.string() + ".manifest.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IOError, "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
}

// --- sample ---------------------------------------------------------------

struct SampleArgs {
  std::string prompts;
  std::string out;
  std::string endpoint;
  std::string model;
  std::size_t n = 32;
  double temperature = 0.7;
  double top_p = 0.95;
  std::size_t max_tokens = 1024;
  std::string api_mode = "completions";
  std::string prompt_template = "{prompt}";
  std::optional<std::uint64_t> seed;
  bool logprobs = false;
  bool greedy = false;
  std::size_t max_n_per_request = 0;
  double timeout = 120.0;
  std::size_t max_retries = 3;
  std::size_t backoff_ms = 500;
  std::size_t concurrency = 4;
  std::string cache_dir = ".rlvrdetect-cache";
  std::string api_key_env = http::kDefaultApiKeyVariable;
  std::string sweep;
};

int cmd_sample(const SampleArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  sampler::SamplingConfig base;
  base.endpoint_url = a.endpoint;
  base.model_name = a.model;
  base.n_samples = a.n;
  base.temperature = a.temperature;
  base.top_p = a.top_p;
  base.max_tokens = a.max_tokens;
  base.api_mode = sampler::parse_api_mode(a.api_mode);
  base.prompt_template = a.prompt_template;
  base.seed = a.seed;
  base.request_logprobs = a.logprobs;
  base.max_n_per_request = a.max_n_per_request;
  base.request_timeout = a.timeout;
  base.max_retries = a.max_retries;
  base.base_backoff = std::chrono::milliseconds(a.backoff_ms);
  base.concurrency_limit = a.concurrency;
  base.api_key_env = a.api_key_env;
  base.cache_dir = a.cache_dir;

  http::parse_url(base.endpoint_url);
  if (base.model_name.empty()) throw Error(Errc::InvalidConfig, "--model is empty");

  std::vector<std::pair<fs::path, sampler::SamplingConfig>> runs;
  if (const auto sweep = parse_sweep(a.sweep, {"n", "temperature"})) {
    for (const auto& v : sweep->values) {
      auto cfg = base;
      if (sweep->key == "n") {
        cfg.n_samples = parse_count(v, "--sweep n");
      } else {
        cfg.temperature = parse_double(v, "--sweep temperature");
      }
      runs.emplace_back(sweep_path(a.out, sweep->key, v), cfg);
    }
  } else {
    runs.emplace_back(a.out, base);
  }
  for (const auto& [path, cfg] : runs) {
    if (cfg.n_samples == 0) throw Error(Errc::InvalidConfig, "--n must be >= 1");
    if (!(cfg.temperature >= 0.0)) throw Error(Errc::InvalidConfig, "--temperature must be >= 0");
    if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw Error(Errc::InvalidConfig, "--top-p must be in (0, 1]");
    if (cfg.max_tokens == 0) throw Error(Errc::InvalidConfig, "--max-tokens must be >= 1");
  }

  const auto prompts = corpus::load_jsonl<corpus::PromptRecord>(a.prompts);
  write_manifest(a.out, sub, {a.prompts});

  int code = kExitOk;
  for (const auto& [path, cfg] : runs) {
    sampler::Sampler s(cfg);
    const auto sets = s.batch_sample(prompts, {.with_greedy = a.greedy});
    corpus::save_jsonl(sets, path);
    std::size_t failed = 0;
    for (const auto& set : sets) {
      if (!set.partial) continue;
      ++failed;
      err << "prompt " << set.prompt_id << ": " << set.error.value_or("incomplete") << " (" << set.completions.size()
          << "/" << set.n_requested << " completions)\n";
    }
    out << path.string() << ": " << sets.size() - failed << " of " << sets.size() << " prompts complete\n";
    if (failed > 0) code = kExitPartial;
  }
  return code;
}

// --- score ----------------------------------------------------------------

struct ScoreArgs {
  std::string completions;
  std::string out;
  std::string methods = "min-knn";
  std::size_t k = 10;
  std::optional<std::size_t> m;
  std::string unit = "token";
  double cdd_alpha = 0.05;
  double min_k_fraction = 0.20;
  std::optional<double> threshold;
  std::size_t max_units = distance::kDefaultMaxUnits;
  std::size_t concurrency = 4;
  std::string sweep;
};

struct ScoreSetting {
  fs::path path;
  std::size_t k = 10;
  std::optional<std::size_t> m;
};

std::string score_fingerprint(const corpus::CompletionSet& set, detector::Method method, const ScoreArgs& a,
                              std::size_t k, std::size_t m) {
  Json j{{"completions", set.config_fingerprint}, {"method", detector::to_string(method)}, {"m", m}};
  switch (method) {
    case detector::Method::MinKnn:
      j["k"] = k;
      j["unit"] = a.unit;
      j["max_units"] = a.max_units;
      break;
    case detector::Method::Cdd:
      j["alpha"] = a.cdd_alpha;
      j["unit"] = a.unit;
      j["max_units"] = a.max_units;
      break;
    case detector::Method::MinKPercent: j["fraction"] = a.min_k_fraction; break;
    case detector::Method::Ppl: break;
  }
  return sha256_hex(j.dump());
}

int cmd_score(const ScoreArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  std::vector<detector::Method> methods;
  for (const auto& name : split_list(a.methods)) {
    const auto m = detector::parse_method(name);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }
  if (methods.empty()) throw Error(Errc::InvalidConfig, "--method is empty");
  const auto unit = distance::parse_unit_mode(a.unit);
  const bool knn = std::find(methods.begin(), methods.end(), detector::Method::MinKnn) != methods.end();

  std::vector<ScoreSetting> settings;
  if (const auto sweep = parse_sweep(a.sweep, {"k", "m"})) {
    for (const auto& v : sweep->values) {
      ScoreSetting s{sweep_path(a.out, sweep->key, v), a.k, a.m};
      (sweep->key == "k" ? s.k : s.m.emplace()) = parse_count(v, "--sweep " + sweep->key);
      settings.push_back(s);
    }
  } else {
    settings.push_back({a.out, a.k, a.m});
  }

  // Fail fast on configuration before touching any input.
  for (const auto& s : settings) {
    detector::DetectorConfig cfg;
    cfg.k = s.k;
    cfg.m = s.m.value_or(std::max<std::size_t>(s.k, 2));
    cfg.cdd_alpha = a.cdd_alpha;
    cfg.min_k_fraction = a.min_k_fraction;
    cfg.max_units = a.max_units;
    if (knn || s.m) cfg.validate();
  }

  const auto sets = corpus::load_jsonl<corpus::CompletionSet>(a.completions);

  std::vector<std::string> missing_greedy;
  std::vector<std::string> missing_logprobs;
  std::vector<std::string> short_sets;
  std::size_t usable = 0;
  for (const auto& set : sets) {
    if (set.partial) continue;
    ++usable;
    for (auto method : methods) {
      if (method == detector::Method::Cdd && !set.greedy) missing_greedy.push_back(set.prompt_id);
      if ((method == detector::Method::Ppl || method == detector::Method::MinKPercent) &&
          (!set.prompt_logprobs || set.prompt_logprobs->empty())) {
        missing_logprobs.push_back(set.prompt_id);
      }
    }
    for (const auto& s : settings) {
      const std::size_t m = s.m.value_or(set.completions.size());
      if (s.m && *s.m > set.completions.size()) {
        short_sets.push_back(set.prompt_id + " (has " + std::to_string(set.completions.size()) + ")");
      } else if (knn && s.k > m) {
        throw Error(Errc::KTooLarge, "k = " + std::to_string(s.k) + " exceeds the " + std::to_string(m) +
                                         " completions of prompt '" + set.prompt_id + "'");
      }
    }
  }
  auto named = [](std::vector<std::string> ids) {
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
    return out;
  };
  if (!missing_greedy.empty()) {
    throw Error(Errc::MissingGreedy, "cdd needs a greedy completion; missing for: " + named(missing_greedy));
  }
  bool drop_logprob_methods = false;
  if (!missing_logprobs.empty()) {
    const std::set<std::string> lacking(missing_logprobs.begin(), missing_logprobs.end());
    if (lacking.size() < usable) {
      throw Error(Errc::MissingLogprobs,
                  "ppl / min-k-percent need prompt logprobs; missing for: " + named(missing_logprobs));
    }
    // The endpoint scored no prompt at all: the methods are unavailable, not an input error.
    err << "notice: no prompt logprobs in " << a.completions << "; ppl / min-k-percent unavailable\n";
    drop_logprob_methods = true;
  }
  if (!short_sets.empty()) {
    throw Error(Errc::TooFewCompletions, "fewer completions than --n for: " + named(short_sets));
  }

  if (drop_logprob_methods) {
    std::erase_if(methods, [](auto m) { return m == detector::Method::Ppl || m == detector::Method::MinKPercent; });
  }

  write_manifest(a.out, sub, {a.completions});

  int code = kExitOk;
  for (const auto& set : sets) {
    if (set.partial) {
      err << "prompt " << set.prompt_id << ": skipped, sampling incomplete (" << set.error.value_or("partial") << ")\n";
      code = kExitPartial;
    }
  }

  for (const auto& s : settings) {
    const std::size_t per_set = methods.size();
    std::vector<std::optional<corpus::ScoreRecord>> results(sets.size() * per_set);
    std::vector<std::string> failures(sets.size() * per_set);

    parallel_for(sets.size() * per_set, a.concurrency, [&](std::size_t job) {
      const auto& set = sets[job / per_set];
      if (set.partial) return;
      const auto method = methods[job % per_set];
      try {
        detector::DetectorConfig cfg;
        cfg.k = s.k;
        cfg.m = s.m.value_or(set.completions.size());
        cfg.unit_mode = unit;
        cfg.method = method;
        cfg.cdd_alpha = a.cdd_alpha;
        cfg.min_k_fraction = a.min_k_fraction;
        cfg.max_units = a.max_units;
        const std::span<const std::string> samples(set.completions.data(), cfg.m);
        detector::DetectionScore score;
        switch (method) {
          case detector::Method::MinKnn: score = detector::min_knn_score(samples, cfg); break;
          case detector::Method::Cdd: score = detector::cdd_score(*set.greedy, samples, cfg); break;
          case detector::Method::Ppl: score = detector::ppl_score(*set.prompt_logprobs); break;
          case detector::Method::MinKPercent:
            score = detector::min_k_percent_score(*set.prompt_logprobs, a.min_k_fraction);
            break;
        }
        corpus::ScoreRecord r;
        r.prompt_id = set.prompt_id;
        r.method = std::string(detector::to_string(method));
        r.score = score.score;
        r.orientation = score.orientation;
        r.k_used = score.k_used;
        r.m_used = method == detector::Method::Ppl || method == detector::Method::MinKPercent
                       ? set.completions.size()
                       : cfg.m;
        r.config_fingerprint = score_fingerprint(set, method, a, s.k, r.m_used);
        if (a.threshold) r.decision = detector::classify(score, *a.threshold);
        results[job] = std::move(r);
      } catch (const std::exception& e) {
        failures[job] = e.what();
      }
    });

    std::vector<corpus::ScoreRecord> records;
    for (std::size_t job = 0; job < results.size(); ++job) {
      if (results[job]) {
        records.push_back(std::move(*results[job]));
      } else if (!failures[job].empty()) {
        err << "prompt " << sets[job / per_set].prompt_id << " [" << detector::to_string(methods[job % per_set])
            << "]: " << failures[job] << '\n';
        code = kExitPartial;
      }
    }
    corpus::save_jsonl(records, s.path);
    out << s.path.string() << ": " << records.size() << " scores over " << usable << " prompts\n";
  }
  return code;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string scores;
  std::string prompts;
  std::string out;
  std::string methods;
  std::string dual_stage;
  std::string quantile_side = "high";
  std::uint64_t seed = 0;
};

Json subset_json(const std::vector<eval::LabeledExample>& examples) {
  Json ids = Json::array();
  for (const auto& e : examples) ids.push_back(e.prompt_id);
  return ids;
}

int cmd_eval(const EvalArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  std::vector<double> qs;
  for (const auto& q : split_list(a.dual_stage)) {
    qs.push_back(parse_double(q, "--dual-stage"));
    if (!(qs.back() > 0.0 && qs.back() < 1.0)) throw Error(Errc::InvalidConfig, "--dual-stage q must be in (0, 1)");
  }
  const auto side = eval::parse_quantile_side(a.quantile_side);
  const auto requested = split_list(a.methods);

  const auto prompts = corpus::load_jsonl<corpus::PromptRecord>(a.prompts);
  const auto records = corpus::load_jsonl<corpus::ScoreRecord>(a.scores);
  const auto grouped = eval::group_scores(records);

  std::map<std::string, const corpus::PromptRecord*> by_id;
  for (const auto& p : prompts) by_id.emplace(p.id, &p);
  std::set<std::string> scored;
  std::vector<std::string> unlabeled;
  for (const auto& r : records) {
    const auto it = by_id.find(r.prompt_id);
    if ((it == by_id.end() || !it->second->label) && scored.insert(r.prompt_id).second) {
      unlabeled.push_back(r.prompt_id);
    }
    scored.insert(r.prompt_id);
  }
  if (!unlabeled.empty()) {
    std::string names;
    for (const auto& id : unlabeled) names += (names.empty() ? "" : ", ") + id;
    throw Error(Errc::UnlabeledPrompt, "scored prompts without a label: " + names);
  }
  std::vector<corpus::PromptRecord> selected;
  for (const auto& p : prompts) {
    if (scored.contains(p.id)) selected.push_back(p);
  }
  const auto corpus = eval::LabeledCorpus::from_prompts(selected);

  write_manifest(a.out, sub, {a.scores, a.prompts});

  const auto reports = eval::evaluate(corpus, grouped, requested);
  Json report{{"full", eval::report_json(reports)}};
  out << eval::report_table(reports);

  int code = kExitOk;
  if (!qs.empty()) {
    const auto ppl = std::find_if(grouped.begin(), grouped.end(), [](const auto& g) { return g.method == "ppl"; });
    if (ppl == grouped.end()) throw Error(Errc::MissingScores, "--dual-stage needs ppl scores in " + a.scores);
    report["dual_stage"] = Json::array();
    for (double q : qs) {
      const auto subsets = eval::dual_stage_subsets(corpus, ppl->by_prompt, q, a.seed, side);
      Json entry{{"q", q}, {"quantile_side", eval::to_string(side)}, {"seed", a.seed},
                 {"subset_size", subsets.low_contamination.size()}, {"corpus_size", corpus.examples.size()}};
      const std::pair<eval::SubsetTag, const std::vector<eval::LabeledExample>*> parts[] = {
          {eval::SubsetTag::LowPretrainContamination, &subsets.low_contamination},
          {eval::SubsetTag::RandomControl, &subsets.random_control}};
      out << "\ndual-stage q=" << q << " side=" << eval::to_string(side) << " (" << subsets.low_contamination.size()
          << " of " << corpus.examples.size() << " prompts)\n";
      for (const auto& [tag, examples] : parts) {
        Json part{{"prompt_ids", subset_json(*examples)}};
        try {
          const auto sub_reports = eval::evaluate(eval::LabeledCorpus{*examples}, grouped, requested, tag);
          part["reports"] = eval::report_json(sub_reports);
          out << eval::report_table(sub_reports);
        } catch (const Error& e) {
          if (e.code() != Errc::EmptyClass) throw;
          part["error"] = e.what();
          err << eval::to_string(tag) << " subset at q=" << q << ": " << e.what() << '\n';
          code = kExitPartial;
        }
        entry[std::string(eval::to_string(tag))] = std::move(part);
      }
      report["dual_stage"].push_back(std::move(entry));
    }
  }

  const Json lines[] = {report};
  corpus::write_jsonl(a.out, lines);
  return code;
}

// --- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  std::string completions;
  std::string out;
  std::string kind = "all";
  std::string embedding_endpoint;
  std::string embedding_model = "default";
  std::string nli_endpoint;
  std::string labeler_endpoint;
  std::string labeler_model = "default";
  std::string api_key_env = http::kDefaultApiKeyVariable;
  double timeout = 120.0;
  std::size_t max_retries = 3;
  std::size_t max_pairs = 64;
  std::uint64_t seed = 0;
  std::optional<double> vocab_size;
  bool vocab_pool = false;
  bool cross_input = false;
  std::size_t rigid_n = 3;
  double min_fraction = 0.5;
  std::optional<std::size_t> min_count;
  double cluster_threshold = 0.5;
  std::string linkage = "average";
  std::string cluster_metric = "jaccard";
  bool cluster_all_rigid = false;
  std::size_t labeler_attempts = 3;
  std::string heatmap;
  std::size_t concurrency = 4;
};

int cmd_analyze(const AnalyzeArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  if (a.kind != "all" && a.kind != "diversity" && a.kind != "rigidity") {
    throw Error(Errc::InvalidConfig, "--kind must be diversity, rigidity or all");
  }
  const bool want_diversity = a.kind != "rigidity";
  const bool want_rigidity = a.kind != "diversity";

  http::ClientOptions client;
  client.timeout_seconds = a.timeout;
  client.retry.max_retries = a.max_retries;
  client.api_key = http::api_key_from_env(a.api_key_env);
  auto with_url = [&](const std::string& url) {
    auto o = client;
    o.base_url = url;
    http::parse_url(url);
    return o;
  };

  std::unique_ptr<diversity::EmbeddingProvider> embedder;
  std::unique_ptr<diversity::NliProvider> nli;
  std::unique_ptr<rigidity::ChatClient> labeler;
  if (want_diversity) {
    if (!a.embedding_endpoint.empty()) {
      embedder = std::make_unique<diversity::HttpEmbeddingProvider>(with_url(a.embedding_endpoint), a.embedding_model);
    } else {
      err << "notice: no --embedding-endpoint; embedding diversity skipped\n";
    }
    if (!a.nli_endpoint.empty()) {
      nli = std::make_unique<diversity::HttpNliProvider>(with_url(a.nli_endpoint));
    } else {
      err << "notice: no --nli-endpoint; NLI diversity skipped\n";
    }
  }
  if (want_rigidity) {
    if (!a.labeler_endpoint.empty()) {
      labeler = std::make_unique<rigidity::HttpChatClient>(with_url(a.labeler_endpoint), a.labeler_model);
    } else {
      err << "notice: no --labeler-endpoint; n-grams left unlabeled, clustering on all rigid n-grams\n";
    }
  }

  rigidity::RigidityOptions ropts;
  ropts.extraction.n = a.rigid_n;
  ropts.extraction.min_fraction = a.min_fraction;
  ropts.extraction.min_count = a.min_count;
  ropts.clustering.threshold = a.cluster_threshold;
  ropts.clustering.linkage = rigidity::parse_linkage(a.linkage);
  ropts.clustering.metric = rigidity::parse_set_metric(a.cluster_metric);
  ropts.cluster_on_all_rigid = a.cluster_all_rigid;
  ropts.labeler_attempts = a.labeler_attempts;
  if (ropts.extraction.n == 0) throw Error(Errc::InvalidConfig, "--rigid-n must be >= 1");
  if (!(a.min_fraction > 0.0 && a.min_fraction <= 1.0)) throw Error(Errc::InvalidConfig, "--min-fraction in (0, 1]");
  if (!a.heatmap.empty() && !want_rigidity) throw Error(Errc::InvalidConfig, "--heatmap needs rigidity analysis");

  const auto sets = corpus::load_jsonl<corpus::CompletionSet>(a.completions);
  write_manifest(a.out, sub, {a.completions});

  diversity::ProfileOptions dopts;
  dopts.ead.fixed_vocab_size = a.vocab_size;
  dopts.nli.max_pairs = a.max_pairs;
  dopts.nli.seed = a.seed;
  dopts.nli_provider = nli.get();
  dopts.embedding_provider = embedder.get();
  if (a.vocab_pool) {
    std::vector<std::string> pool;
    for (const auto& s : sets) pool.insert(pool.end(), s.completions.begin(), s.completions.end());
    dopts.ead.pool_vocab_sizes = diversity::pool_vocabulary_sizes(pool);
  }
  diversity::ProfileOptions offline = dopts;
  offline.nli_provider = nullptr;
  offline.embedding_provider = nullptr;

  struct Outcome {
    std::optional<diversity::DiversityProfile> diversity;
    std::optional<rigidity::RigidityProfile> rigidity;
    std::vector<std::string> notices;
  };
  std::vector<Outcome> outcomes(sets.size());
  parallel_for(sets.size(), a.concurrency, [&](std::size_t i) {
    const auto& set = sets[i];
    auto& o = outcomes[i];
    if (set.completions.empty()) {
      o.notices.push_back("no completions, skipped");
      return;
    }
    if (want_diversity) {
      try {
        o.diversity = diversity::compute_profile(set.prompt_id, set.completions, dopts);
      } catch (const std::exception& e) {
        o.notices.push_back(std::string("diversity provider failed, kept offline metrics: ") + e.what());
        try {
          o.diversity = diversity::compute_profile(set.prompt_id, set.completions, offline);
        } catch (const std::exception& e2) {
          o.notices.push_back(std::string("diversity failed: ") + e2.what());
        }
      }
    }
    if (want_rigidity) {
      try {
        o.rigidity = rigidity::build_profile(set.prompt_id, set.prompt_text, set.completions, ropts, labeler.get());
      } catch (const std::exception& e) {
        o.notices.push_back(std::string("labeler failed, clustered without labels: ") + e.what());
        try {
          o.rigidity = rigidity::build_profile(set.prompt_id, set.prompt_text, set.completions, ropts, nullptr);
        } catch (const std::exception& e2) {
          o.notices.push_back(std::string("rigidity failed: ") + e2.what());
        }
      }
    }
  });

  int code = kExitOk;
  std::vector<Json> lines;
  std::vector<rigidity::RigidityProfile> rigid_profiles;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto& o = outcomes[i];
    for (const auto& n : o.notices) err << "prompt " << sets[i].prompt_id << ": " << n << '\n';
    if (!o.notices.empty()) code = kExitPartial;
    if (o.diversity) {
      Json j = *o.diversity;
      j["schema"] = corpus::kSchemaVersion;
      lines.push_back(std::move(j));
    }
    if (o.rigidity) {
      Json j = *o.rigidity;
      j["schema"] = corpus::kSchemaVersion;
      lines.push_back(std::move(j));
      rigid_profiles.push_back(std::move(*o.rigidity));
    }
  }

  if (a.cross_input && want_diversity) {
    std::vector<std::string> pool;
    for (const auto& s : sets) pool.insert(pool.end(), s.completions.begin(), s.completions.end());
    try {
      Json j = diversity::compute_profile(diversity::kCrossInputId, pool, dopts);
      j["schema"] = corpus::kSchemaVersion;
      lines.push_back(std::move(j));
    } catch (const std::exception& e) {
      err << "cross-input: " << e.what() << '\n';
      code = kExitPartial;
    }
  }
  corpus::write_jsonl(a.out, lines);

  if (!a.heatmap.empty()) {
    fs::create_directories(a.heatmap);
    for (const auto& p : rigid_profiles) {
      rigidity::write_co_occurrence_csv(p, fs::path(a.heatmap) / (sanitize(p.prompt_id) + ".csv"));
    }
  }
  if (!rigid_profiles.empty()) {
    const auto hist = rigidity::cluster_histogram(std::span<const rigidity::RigidityProfile>(rigid_profiles));
    out << "reasoning-structure clusters over " << hist.prompts << " prompts\n";
    for (const auto& [threshold, fraction] : hist.cumulative) {
      char line[64];
      std::snprintf(line, sizeof line, "  <=%-3zu %6.2f%%\n", threshold, 100.0 * fraction);
      out << line;
    }
  }
  out << a.out << ": " << lines.size() << " profiles\n";
  return code;
}

// --- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string prompts_out;
  std::string out;
  std::size_t members = 100;
  std::size_t nonmembers = 100;
  std::size_t n = 32;
  std::uint64_t seed = synthetic::BenchmarkOptions{}.seed;
};

int cmd_synth(const SynthArgs& a, const CLI::App& sub, std::ostream& out) {
  synthetic::BenchmarkOptions options;
  options.members = a.members;
  options.nonmembers = a.nonmembers;
  options.completions = a.n;
  options.seed = a.seed;
  write_manifest(a.out, sub, {});
  const auto bench = synthetic::generate_benchmark(options);
  const std::string fingerprint =
      sha256_hex(Json{{"kind", "synthetic"}, {"n", a.n}, {"seed", a.seed}}.dump());
  std::vector<corpus::PromptRecord> prompts;
  std::vector<corpus::CompletionSet> sets;
  for (const auto& b : bench) {
    prompts.push_back(b.prompt);
    corpus::CompletionSet set;
    set.prompt_id = b.prompt.id;
    set.prompt_text = b.prompt.prompt;
    set.model_name = "synthetic";
    set.config_fingerprint = fingerprint;
    set.n_requested = a.n;
    set.completions = b.completions;
    set.prompt_logprobs = stub::pseudo_prompt_logprobs(b.prompt.prompt);
    set.truncated_flags.assign(b.completions.size(), false);
    sets.push_back(std::move(set));
  }
  corpus::save_jsonl(prompts, a.prompts_out);
  corpus::save_jsonl(sets, a.out);
  out << "wrote " << prompts.size() << " prompts to " << a.prompts_out << " and completions to " << a.out << '\n';
  return kExitOk;
}

fs::path find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOError, "cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t number = 0;
  for (std::string line; std::getline(in, line);) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    key.erase(0, key.find_first_not_of('-'));
    if (key.empty()) throw Error(Errc::ParseError, path.string() + ":" + std::to_string(number) + ": empty key");
    out.emplace_back(key, trim(t.substr(eq + 1)));
  }
  return out;
}

fs::path sweep_path(const fs::path& base, const std::string& key, const std::string& value) {
  fs::path name = base.stem();
  name += "." + key + value;
  name += base.extension();
  return base.parent_path() / name;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detect RL-stage training prompts from the structure of sampled completions.", "rlvrdetect"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(RLVRDETECT_VERSION));

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value file; command-line flags override it");
  };

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Sample completions for every prompt");
  add_config(sample);
  sample->add_option("--prompts", sa.prompts, "prompts.jsonl")->required();
  sample->add_option("--out", sa.out, "completions.jsonl to write")->required();
  sample->add_option("--endpoint", sa.endpoint, "OpenAI-compatible base URL")->required();
  sample->add_option("--model", sa.model, "model name sent to the endpoint")->required();
  sample->add_option("--n", sa.n, "completions per prompt");
  sample->add_option("--temperature", sa.temperature);
  sample->add_option("--top-p", sa.top_p);
  sample->add_option("--max-tokens", sa.max_tokens);
  sample->add_option("--api-mode", sa.api_mode, "completions or chat");
  sample->add_option("--prompt-template", sa.prompt_template, "{prompt} is replaced by the prompt text");
  sample->add_option("--seed", sa.seed, "request seed; request i of a prompt uses seed + i");
  sample->add_flag("--logprobs", sa.logprobs, "request completion and prompt logprobs");
  sample->add_flag("--greedy", sa.greedy, "also fetch a temperature-0 completion (for cdd)");
  sample->add_option("--max-n-per-request", sa.max_n_per_request, "split n across requests; 0 = no split");
  sample->add_option("--timeout", sa.timeout, "seconds per request");
  sample->add_option("--max-retries", sa.max_retries);
  sample->add_option("--backoff-ms", sa.backoff_ms, "base retry backoff");
  sample->add_option("--concurrency", sa.concurrency, "prompts in flight");
  sample->add_option("--cache-dir", sa.cache_dir, "completion cache; empty disables it");
  sample->add_option("--api-key-env", sa.api_key_env, "environment variable holding the API key");
  sample->add_option("--sweep", sa.sweep, "n=8,16,32 or temperature=0.2,0.7; one output per value");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score completion sets");
  add_config(score);
  score->add_option("--completions", sc.completions)->required();
  score->add_option("--out", sc.out, "scores.jsonl to write")->required();
  score->add_option("--method", sc.methods, "comma list of min-knn, cdd, ppl, min-k-percent");
  score->add_option("--k", sc.k, "nearest-neighbour distances averaged by min-knn");
  score->add_option("--n", sc.m, "completions used per prompt (default: all)");
  score->add_option("--unit", sc.unit, "token or char");
  score->add_option("--cdd-alpha", sc.cdd_alpha);
  score->add_option("--min-k-fraction", sc.min_k_fraction);
  score->add_option("--threshold", sc.threshold, "emit member / non-member decisions");
  score->add_option("--max-units", sc.max_units, "truncate sequences to this many units");
  score->add_option("--concurrency", sc.concurrency, "worker threads");
  score->add_option("--sweep", sc.sweep, "k=2,4,8 or m=8,16,32; one output per value");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "ROC AUC per method over a labeled corpus");
  add_config(evaluate);
  evaluate->add_option("--scores", ev.scores)->required();
  evaluate->add_option("--prompts", ev.prompts, "labeled prompts.jsonl")->required();
  evaluate->add_option("--out", ev.out, "report JSON to write")->required();
  evaluate->add_option("--method", ev.methods, "methods to report even if unscored");
  evaluate->add_option("--dual-stage", ev.dual_stage, "comma list of PPL quantiles q in (0, 1)");
  evaluate->add_option("--quantile-side", ev.quantile_side, "PPL tail kept: high or low");
  evaluate->add_option("--seed", ev.seed, "seed of the random control subset");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Diversity and rigidity profiles");
  add_config(analyze);
  analyze->add_option("--completions", an.completions)->required();
  analyze->add_option("--out", an.out, "profiles.jsonl to write")->required();
  analyze->add_option("--kind", an.kind, "diversity, rigidity or all");
  analyze->add_option("--embedding-endpoint", an.embedding_endpoint);
  analyze->add_option("--embedding-model", an.embedding_model);
  analyze->add_option("--nli-endpoint", an.nli_endpoint);
  analyze->add_option("--labeler-endpoint", an.labeler_endpoint, "chat endpoint that categorizes rigid n-grams");
  analyze->add_option("--labeler-model", an.labeler_model);
  analyze->add_option("--api-key-env", an.api_key_env);
  analyze->add_option("--timeout", an.timeout);
  analyze->add_option("--max-retries", an.max_retries);
  analyze->add_option("--max-pairs", an.max_pairs, "NLI pairs judged per prompt");
  analyze->add_option("--seed", an.seed, "NLI pair sampling seed");
  analyze->add_option("--vocab-size", an.vocab_size, "fixed EAD vocabulary size");
  analyze->add_flag("--vocab-pool", an.vocab_pool, "EAD vocabulary from all completions in the file");
  analyze->add_flag("--cross-input", an.cross_input, "add a profile pooling every prompt's completions");
  analyze->add_option("--rigid-n", an.rigid_n);
  analyze->add_option("--min-fraction", an.min_fraction, "support threshold as a fraction of completions");
  analyze->add_option("--min-count", an.min_count, "absolute support threshold");
  analyze->add_option("--cluster-threshold", an.cluster_threshold);
  analyze->add_option("--linkage", an.linkage, "average, single or complete");
  analyze->add_option("--cluster-metric", an.cluster_metric, "jaccard or hamming");
  analyze->add_flag("--cluster-all-rigid", an.cluster_all_rigid, "cluster on every rigid n-gram");
  analyze->add_option("--labeler-attempts", an.labeler_attempts);
  analyze->add_option("--heatmap", an.heatmap, "directory for per-prompt co-occurrence CSVs");
  analyze->add_option("--concurrency", an.concurrency);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write the synthetic collapse benchmark");
  add_config(synth);
  synth->add_option("--prompts-out", sy.prompts_out)->required();
  synth->add_option("--out", sy.out, "completions.jsonl to write")->required();
  synth->add_option("--members", sy.members);
  synth->add_option("--nonmembers", sy.nonmembers);
  synth->add_option("--n", sy.n, "completions per prompt");
  synth->add_option("--seed", sy.seed);

  std::vector<std::string> args = args_in;
  try {
    const fs::path config = find_config_arg(args);
    const auto sub_pos = std::find_if(args.begin(), args.end(), [](const std::string& s) { return !s.starts_with('-'); });
    if (!config.empty() && sub_pos != args.end()) {
      CLI::App* chosen = app.get_subcommand_no_throw(*sub_pos);
      if (chosen) {
        std::vector<std::string> injected;
        for (const auto& [key, value] : read_config_file(config)) {
          if (key == "config") continue;
          if (chosen->get_option_no_throw("--" + key)) {
            injected.push_back("--" + key + "=" + value);
            continue;
          }
          bool known = false;
          for (const CLI::App* other : app.get_subcommands({})) known = known || other->get_option_no_throw("--" + key);
          if (!known) throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + config.string());
        }
        args.insert(sub_pos + 1, injected.begin(), injected.end());
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*sample) return cmd_sample(sa, *sample, out, err);
    if (*score) return cmd_score(sc, *score, out, err);
    if (*evaluate) return cmd_eval(ev, *evaluate, out, err);
    if (*analyze) return cmd_analyze(an, *analyze, out, err);
    if (*synth) return cmd_synth(sy, *synth, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace rlvrdetect::cli
