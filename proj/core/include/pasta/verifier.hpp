// SPDX-License-Identifier: Apache-2.0
//
// Judge-based filtering of candidate pairs and the failure-mode targeting audit.
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pasta/core_model.hpp"
#include "pasta/model_backend.hpp"
#include "pasta/prompt_library.hpp"

namespace pasta {

enum class DiscardReason {
    PreferredInaccurate,
    AdversaryTooSimilar,
    NoClearContradiction,
    ModeMistargeted,
    JudgeUnparseable,
};
inline constexpr std::array<DiscardReason, 5> kAllDiscardReasons = {
    DiscardReason::PreferredInaccurate, DiscardReason::AdversaryTooSimilar,
    DiscardReason::NoClearContradiction, DiscardReason::ModeMistargeted,
    DiscardReason::JudgeUnparseable};

/// "PREFERRED_INACCURATE", ...
std::string_view to_string(DiscardReason reason) noexcept;
std::optional<DiscardReason> parse_discard_reason(std::string_view text);

/// True for reasons a fresh adversary could fix.
constexpr bool adversary_side(DiscardReason r) noexcept {
    return r == DiscardReason::AdversaryTooSimilar || r == DiscardReason::NoClearContradiction ||
           r == DiscardReason::ModeMistargeted;
}

struct Verdict {
    bool retain = false;
    std::optional<DiscardReason> reason;  // set iff !retain
    std::string judge_raw;

    static Verdict keep(std::string raw) { return {true, std::nullopt, std::move(raw)}; }
    static Verdict discard(DiscardReason r, std::string raw) { return {false, r, std::move(raw)}; }
};

/// Reads the judge's final non-empty line: "RETAIN" or "DISCARD:<REASON>".
/// Anything else becomes a JUDGE_UNPARSEABLE discard.
Verdict parse_verdict(std::string_view judge_output);

/// Filter prompt for one pair; the pair's single adversary fills the adversary list.
ChatRequest filter_request(const PromptLibrary& prompts, const CandidatePair& pair);

Verdict verify_pair(const CandidatePair& pair, ChatBackend& judge, const PromptLibrary& prompts);

struct RetentionStats {
    std::size_t candidates = 0;
    std::size_t retained = 0;
    std::map<std::string, std::size_t> discarded_by_reason;
    std::size_t regenerations = 0;

    double retention_rate() const noexcept {
        return candidates == 0 ? 0.0
                               : static_cast<double>(retained) / static_cast<double>(candidates);
    }
    std::size_t discarded() const noexcept;
    std::string to_json() const;
};

/// Produces a fresh adversary for `pair`; `attempt` starts at 1.
using Regenerator =
    std::function<std::optional<ResponseRecord>(const CandidatePair& pair, std::size_t attempt)>;

struct FilterPolicy {
    /// Regeneration rounds for adversary-side discards; 0 disables.
    std::size_t max_regen = 1;
    Regenerator regenerate;
};

struct RejectRecord {
    CandidatePair pair;
    Verdict verdict;
    std::size_t regenerations = 0;
};
std::string serialize(const RejectRecord& reject);

struct FilterResult {
    std::vector<PreferenceRecord> retained;
    std::vector<RejectRecord> rejects;
    RetentionStats stats;
};

/// Verifies every candidate (bounded parallel judge calls), regenerates
/// adversaries per policy, then discards every pair of a (video, query) group
/// whose preferred response was judged inaccurate. Output keeps input order.
/// Throws Error(InvalidValue) on an empty candidate list.
FilterResult filter_dataset(std::span<const CandidatePair> candidates, ChatBackend& judge,
                            const PromptLibrary& prompts, const FilterPolicy& policy = {});

// ---------------------------------------------------------------- targeting audit

/// Bound to the audit's claimed-mode slot so the judge never sees the intended mode.
inline constexpr std::string_view kNeutralClaim =
    "not disclosed; name the single category from the definitions below that the example induces";

ChatRequest audit_request(const PromptLibrary& prompts, const PreferenceRecord& record);

struct AuditJudgment {
    bool parsed = false;
    bool yes = false;
    std::optional<FailureMode> named_mode;
};
AuditJudgment parse_audit(std::string_view judge_output);

struct ModeAccuracy {
    std::size_t total = 0;
    std::size_t yes = 0;
    std::size_t unparseable = 0;

    double fraction() const noexcept {
        return total == 0 ? 0.0 : static_cast<double>(yes) / static_cast<double>(total);
    }
};

struct TargetingReport {
    /// nullopt when the sample holds no pair of that mode.
    std::array<std::optional<ModeAccuracy>, 3> by_mode{};

    /// Mean of per-mode fractions over present modes.
    double average() const;
    /// Percentages rounded half away from zero to one decimal.
    std::string to_text() const;
    std::string to_json() const;
};

/// A pair counts as targeted when the judge says Yes and names the pair's own
/// mode. Unparseable judgments count as No.
TargetingReport targeting_accuracy(std::span<const PreferenceRecord> sample, ChatBackend& judge,
                                   const PromptLibrary& prompts);

}  // namespace pasta
