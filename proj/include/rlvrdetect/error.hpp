#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rlvrdetect {

enum class Errc {
  // detector
  SingleCompletion,
  KTooLarge,
  EmptySamples,
  EmptyLogprobs,
  PositiveLogprob,
  InvalidConfig,
  EmptyInput,
  // sampler / providers
  EndpointError,
  PartialResult,
  AuthError,
  ProviderError,
  LabelerError,
  // diversity
  NoNgrams,
  TooFewEmbeddings,
  DimensionMismatch,
  TooFewCompletions,
  // eval
  EmptyClass,
  NonFiniteScore,
  MissingScores,
  ScoreCoverageGap,
  UnlabeledPrompt,
  // corpus
  ParseError,
  DuplicateId,
  IOError,
  SchemaVersion,
  // cli
  MissingGreedy,
  MissingLogprobs,
};

std::string_view errc_name(Errc code) noexcept;

/// Base of every error thrown by the library. `code()` identifies the failure
/// class; `what()` carries the human-readable detail prefixed by the class name.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Transport or HTTP failure after the retry budget is spent. `status()` is the
/// last HTTP status seen, or 0 when no response was received at all.
class EndpointError : public Error {
 public:
  EndpointError(int status, const std::string& detail)
      : Error(Errc::EndpointError, detail), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace rlvrdetect
