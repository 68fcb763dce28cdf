#pragma once

// Subcommand entry point: sample, score, eval, analyze, synth.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace rlvrdetect::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Parses a plain `key = value` file; `#` starts a comment line.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// `dir/stem.<key><value>.ext`, the per-setting output of a sweep.
std::filesystem::path sweep_path(const std::filesystem::path& base, const std::string& key, const std::string& value);

}  // namespace rlvrdetect::cli
