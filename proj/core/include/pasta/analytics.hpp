// SPDX-License-Identifier: Apache-2.0
//
// Learning-efficiency and robustness analytics over score tables and
// adversarial-QA responses.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pasta/core_model.hpp"
#include "pasta/model_backend.hpp"
#include "pasta/numeric.hpp"
#include "pasta/prompt_library.hpp"

namespace pasta {

struct BenchmarkScore {
    std::string method;
    std::string benchmark;
    double score = 0.0;
    std::size_t n_pairs = 0;
};

/// Gain per thousand preference pairs. Throws Error(InvalidValue) when n_pairs is 0.
double information_gain(double final_score, double baseline_score, std::size_t n_pairs);
/// Percentage change over the baseline. Throws Error(InvalidValue) when baseline <= 0.
double relative_improvement(double final_score, double baseline_score);

/// Header `method,benchmark,score,n_pairs`. Throws Error(ParseError | InvalidValue).
std::vector<BenchmarkScore> parse_scores_csv(std::string_view text);
std::string scores_csv(std::span<const BenchmarkScore> scores);

struct GainRow {
    std::string benchmark;
    std::string method;
    double score = 0.0;
    double baseline = 0.0;
    std::size_t n_pairs = 0;
    double gain = 0.0;
    double relative_improvement = 0.0;
};

/// gain(method) / gain(versus), from unrounded gains.
struct GainRatio {
    std::string benchmark;
    std::string method;
    std::string versus;
    double ratio = 0.0;
};

struct GainReport {
    std::vector<GainRow> rows;
    std::vector<GainRatio> ratios;

    const GainRow* find(std::string_view benchmark, std::string_view method) const;
    const GainRatio* ratio(std::string_view benchmark, std::string_view method,
                           std::string_view versus) const;

    /// Gains and improvements rounded half away from zero to two decimals.
    std::string to_csv() const;
    std::string ratios_csv() const;
    std::string summary() const;
};

/// Rows in benchmark order of first appearance, methods in input order.
/// Ratios are emitted for every ordered pair of non-baseline methods whose
/// denominator gain is positive. Throws Error(MissingBaseline) naming the benchmark.
GainReport gain_report(std::span<const BenchmarkScore> scores, std::string_view baseline_method);

// ---------------------------------------------------------------- scaling

struct ScalingCurve {
    std::string method;
    std::string benchmark;
    /// Sorted by n_pairs.
    std::vector<BenchmarkScore> points;
    /// Indices i >= 1 with points[i].score < points[i-1].score.
    std::vector<std::size_t> degradations;
};

/// One curve per (method, benchmark). Throws Error(InsufficientPoints) for a
/// curve with fewer than two points and Error(DuplicatePoint) for a repeated n_pairs.
std::vector<ScalingCurve> scaling_report(std::span<const BenchmarkScore> points);
std::string scaling_csv(std::span<const ScalingCurve> curves);

// ---------------------------------------------------------------- adversarial QA

enum class QuestionKind { AdvQuestion, AdvOptions };
/// "adv_question" | "adv_options"
std::string_view to_string(QuestionKind kind) noexcept;
/// Throws Error(UnknownKind).
QuestionKind parse_question_kind(std::string_view text);

class RejectionRule {
public:
    /// "cannot be answered", "insufficient information"
    RejectionRule();
    /// Phrases are lowercased; throws Error(InvalidValue) on an empty list or phrase.
    explicit RejectionRule(std::vector<std::string> phrases);

    /// Case-insensitive substring match against any phrase.
    bool matches(std::string_view response) const;
    const std::vector<std::string>& phrases() const noexcept { return phrases_; }

private:
    std::vector<std::string> phrases_;
};

/// True when the response picks "None of the Above" (case-insensitive).
bool selects_none_of_the_above(std::string_view response);

struct AdversarialResponse {
    FailureMode mode = FailureMode::Spatial;
    QuestionKind kind = QuestionKind::AdvQuestion;
    std::string response;
    std::string question;
    std::string video_id;
};

/// JSON lines with keys mode, kind, response and optional question, video_id.
std::vector<AdversarialResponse> parse_adversarial_jsonl(std::string_view text);
std::string serialize(const AdversarialResponse& item);

struct AdversarialCell {
    std::size_t total = 0;
    std::size_t correct = 0;
    double rate() const noexcept {
        return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    }
};

struct AdversarialReport {
    /// [mode][kind]
    std::array<std::array<AdversarialCell, 2>, 3> cells{};

    const AdversarialCell& at(FailureMode mode, QuestionKind kind) const {
        return cells[index_of(mode)][static_cast<std::size_t>(kind)];
    }
    /// Columns mode,kind,total,correct,rate (rate to one decimal).
    std::string to_csv() const;
    std::string summary() const;
};

/// adv_question is correct when a rejection phrase matches; adv_options only
/// when the response selects None of the Above.
AdversarialReport adversarial_eval(std::span<const AdversarialResponse> responses,
                                   const RejectionRule& rules = RejectionRule());

/// As adversarial_eval, but adv_question responses are scored by a judge
/// replying "Judgment: CORRECT" or "Judgment: INCORRECT"; failures and
/// unparseable replies count as incorrect.
AdversarialReport adversarial_eval_judged(std::span<const AdversarialResponse> responses,
                                          ChatBackend& judge, const PromptLibrary& prompts);

struct AdversarialQuestion {
    FailureMode mode = FailureMode::Spatial;
    QuestionKind kind = QuestionKind::AdvQuestion;
    /// For adv_options: the question line followed by the option lines.
    std::string text;
};

/// Parses a generated question set. Expects one question and one options
/// block per mode; throws Error(ParseShortfall) when any of the six is missing.
std::vector<AdversarialQuestion> parse_adversarial_qa(std::string_view text);

ChatRequest qa_generation_request(const PromptLibrary& prompts, const VideoRef& video,
                                  std::vector<std::string> frames);
ChatRequest answer_request(const VideoRef& video, const AdversarialQuestion& question,
                           std::vector<std::string> frames);
ChatRequest qa_judge_request(const PromptLibrary& prompts, const AdversarialResponse& item);

}  // namespace pasta
