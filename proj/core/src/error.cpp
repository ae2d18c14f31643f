// SPDX-License-Identifier: Apache-2.0
#include "pasta/error.hpp"

namespace pasta {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MissingField: return "MISSING_FIELD";
        case ErrorCode::ModeMismatch: return "MODE_MISMATCH";
        case ErrorCode::IdenticalResponses: return "IDENTICAL_RESPONSES";
        case ErrorCode::RoleSamplingMismatch: return "ROLE_SAMPLING_MISMATCH";
        case ErrorCode::DuplicatePairId: return "DUPLICATE_PAIR_ID";
        case ErrorCode::SchemaVersion: return "SCHEMA_VERSION";
        case ErrorCode::InvalidValue: return "INVALID_VALUE";
        case ErrorCode::ParseError: return "PARSE_ERROR";
        case ErrorCode::Io: return "IO_ERROR";
        case ErrorCode::UnknownTemplate: return "UNKNOWN_TEMPLATE";
        case ErrorCode::MissingSlot: return "MISSING_SLOT";
        case ErrorCode::TemplateSlotMismatch: return "TEMPLATE_SLOT_MISMATCH";
        case ErrorCode::FrameLimit: return "FRAME_LIMIT";
        case ErrorCode::EmptyManifest: return "EMPTY_MANIFEST";
        case ErrorCode::ParseShortfall: return "PARSE_SHORTFALL";
        case ErrorCode::StageFailure: return "STAGE_FAILURE";
        case ErrorCode::EmptyPartition: return "EMPTY_PARTITION";
        case ErrorCode::UnknownResponse: return "UNKNOWN_RESPONSE";
        case ErrorCode::MissingReference: return "MISSING_REFERENCE";
        case ErrorCode::InsufficientPoints: return "INSUFFICIENT_POINTS";
        case ErrorCode::DuplicatePoint: return "DUPLICATE_POINT";
        case ErrorCode::MissingBaseline: return "MISSING_BASELINE";
        case ErrorCode::UnknownKind: return "UNKNOWN_KIND";
    }
    return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace pasta
