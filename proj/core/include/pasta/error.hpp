// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pasta {

enum class ErrorCode {
    MissingField,
    ModeMismatch,
    IdenticalResponses,
    RoleSamplingMismatch,
    DuplicatePairId,
    SchemaVersion,
    InvalidValue,
    ParseError,
    Io,
    UnknownTemplate,
    MissingSlot,
    TemplateSlotMismatch,
    FrameLimit,
    EmptyManifest,
    ParseShortfall,
    StageFailure,
    EmptyPartition,
    UnknownResponse,
    MissingReference,
    InsufficientPoints,
    DuplicatePoint,
    MissingBaseline,
    UnknownKind,
};

/// Stable upper-snake identifier, e.g. "IDENTICAL_RESPONSES".
std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace pasta
