// SPDX-License-Identifier: Apache-2.0
//
// Fixed instruction lines appended to rendered templates. They pin the output
// format each stage parses and let the mock backend recognize the request kind.
#pragma once

#include <string_view>

namespace pasta::protocol {

inline constexpr std::string_view kSystemText =
    "You are a careful assistant for video understanding. Answer only from the provided frames.";

/// Followed by the video id on the same line.
inline constexpr std::string_view kVideoLine = "Video: ";

/// Followed by "<n> items." on the same line.
inline constexpr std::string_view kQueryListInstruction =
    "Return only the straightforward questions, as a numbered list of exactly ";

inline constexpr std::string_view kPreferredInstruction =
    "Answer the query accurately and in detail, describing only what the frames show.";

/// Followed by one misalignment instruction.
inline constexpr std::string_view kAdversarialInstruction = "Adversarial instruction: ";

inline constexpr std::string_view kQueryLine = "Query: ";

inline constexpr std::string_view kFilterVerdictLine = "End your answer with exactly one final line: RETAIN";

inline constexpr std::string_view kAuditJudgmentLine = "Judgment: [Yes/No]";

inline constexpr std::string_view kQaEvalJudgmentLine = "Judgment: [CORRECT/INCORRECT]";

inline constexpr std::string_view kQaGenFormatLine = "Adversarial Options [Cross-Frame Disconnection]:";

inline constexpr std::string_view kAnswerInstruction =
    "Answer the question about the video. If it cannot be answered from the video, say so.";

inline constexpr std::string_view kNoneOfTheAbove = "None of the Above";

}  // namespace pasta::protocol
