#include "rvlm/errors.hpp"

namespace rvlm {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::MaskCountMismatch: return "MaskCountMismatch";
    case Errc::MissingDepth: return "MissingDepth";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UnsupportedCategory: return "UnsupportedCategory";
    case Errc::ShapeError: return "ShapeError";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::IndivisibleFactor: return "IndivisibleFactor";
    case Errc::IndivisibleChannels: return "IndivisibleChannels";
    case Errc::ModalityMismatch: return "ModalityMismatch";
    case Errc::EmptyRegion: return "EmptyRegion";
    case Errc::RoleOrderError: return "RoleOrderError";
    case Errc::RegionCountMismatch: return "RegionCountMismatch";
    case Errc::MissingImageTokens: return "MissingImageTokens";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::EmptyLossMask: return "EmptyLossMask";
    case Errc::UnknownStage: return "UnknownStage";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::CorruptArchive: return "CorruptArchive";
    case Errc::UnclassifiableQuestion: return "UnclassifiableQuestion";
    case Errc::ExtractionFailure: return "ExtractionFailure";
    case Errc::VariantMismatch: return "VariantMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rvlm
