#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eak {

enum class ErrorCode {
    // tensor core
    ZeroNormRow,
    DimensionMismatch,
    KOutOfRange,
    // embedding store
    BadMagic,
    UnsupportedVersion,
    UnsupportedDtype,
    TruncatedFile,
    MetadataRowCountMismatch,
    MalformedMetadata,
    DuplicateId,
    InvalidSpec,
    IoError,
    // losses / heads
    ShapeMismatch,
    BatchTooSmall,
    LabelOutOfRange,
    EmptyLabelSet,
    OwnershipViolation,
    NonFiniteLoss,
    StaleCache,
    InvalidConfig,
    // captioning / pipelines
    MissingLabels,
    PairingMismatch,
    MissingCaptions,
    UnknownCaptionId,
    // eval
    NoRelevantItems,
    UnknownMatchId,
    KExceedsTrainSize,
    ClassCountMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above, so
/// callers (and tests) can branch on the kind of failure without parsing
/// messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

} // namespace eak
