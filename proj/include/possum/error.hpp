#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace possum {

/// Every failure the library reports carries one of these codes.
enum class Errc {
  // domain
  ForeignTweet,
  SchemaMismatch,
  InvalidArgument,
  Io,
  // pool
  EmptyTopics,
  WeightTooSmall,
  ClientError,
  RateLimited,
  NotFound,
  // filters
  UnparseableReply,
  AlreadyAugmented,
  // prompts
  EmptyFeatures,
  PlaceholderLeak,
  ParseError,
  MissingTitle,
  DuplicateTitle,
  UnknownSymbol,
  OutOfRange,
  MissingStateFeatures,
  MissingBackground,
  // annotator
  AnnotatorError,
  Exhausted,
  MissingTruth,
  // frame builder
  EmptyAux,
  MissingCombo,
  NonConvergence,
  StructuralZero,
  // mrp
  NonFinite,
  AllDivergent,
  UnknownCategory,
  EmptyCrosstab,
  // eval
  LengthMismatch,
  DegenerateRanks,
  TooFewDraws,
  AllZero,
  NoSharedAreas,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace possum
