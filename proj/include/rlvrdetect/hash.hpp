#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace rlvrdetect {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws Error(IOError) if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Converts CRLF and lone CR to LF.
std::string normalize_newlines(std::string_view text);

/// Cache key for a prompt: SHA-256 of its UTF-8 bytes after newline normalization.
std::string prompt_hash(std::string_view prompt);

}  // namespace rlvrdetect
