#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rvlm {

enum class Errc {
  // data ingest
  MalformedRecord,
  MaskCountMismatch,
  MissingDepth,
  LengthMismatch,
  UnsupportedCategory,
  // vision / connector / refiner
  ShapeError,
  NonFiniteInput,
  IndivisibleFactor,
  IndivisibleChannels,
  ModalityMismatch,
  EmptyRegion,
  // sequence builder
  RoleOrderError,
  RegionCountMismatch,
  MissingImageTokens,
  // language model
  SequenceTooLong,
  EmptyLossMask,
  // curriculum
  UnknownStage,
  EmptyDataset,
  NonFiniteLoss,
  CorruptArchive,
  // evaluator
  UnclassifiableQuestion,
  ExtractionFailure,
  VariantMismatch,
  // cli
  InvalidConfig,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Exception carrying one of the named error kinds above. Every throw site in
/// the library uses this type so callers can dispatch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the error-name prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace rvlm
