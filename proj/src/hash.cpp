#include "rlvrdetect/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include "rlvrdetect/error.hpp"

namespace rlvrdetect {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::SingleCompletion: return "SingleCompletion";
    case Errc::KTooLarge: return "KTooLarge";
    case Errc::EmptySamples: return "EmptySamples";
    case Errc::EmptyLogprobs: return "EmptyLogprobs";
    case Errc::PositiveLogprob: return "PositiveLogprob";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EndpointError: return "EndpointError";
    case Errc::PartialResult: return "PartialResult";
    case Errc::AuthError: return "AuthError";
    case Errc::ProviderError: return "ProviderError";
    case Errc::LabelerError: return "LabelerError";
    case Errc::NoNgrams: return "NoNgrams";
    case Errc::TooFewEmbeddings: return "TooFewEmbeddings";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TooFewCompletions: return "TooFewCompletions";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::NonFiniteScore: return "NonFiniteScore";
    case Errc::MissingScores: return "MissingScores";
    case Errc::ScoreCoverageGap: return "ScoreCoverageGap";
    case Errc::UnlabeledPrompt: return "UnlabeledPrompt";
    case Errc::ParseError: return "ParseError";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::IOError: return "IOError";
    case Errc::SchemaVersion: return "SchemaVersion";
    case Errc::MissingGreedy: return "MissingGreedy";
    case Errc::MissingLogprobs: return "MissingLogprobs";
  }
  return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("sha256: OpenSSL digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string normalize_newlines(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

std::string prompt_hash(std::string_view prompt) { return sha256_hex(normalize_newlines(prompt)); }

}  // namespace rlvrdetect
