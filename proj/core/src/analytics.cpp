// SPDX-License-Identifier: Apache-2.0
#include "pasta/analytics.hpp"

#include <algorithm>
#include <cctype>
#include <fmt/format.h>
#include <json.hpp>
#include <map>
#include <set>

#include "pasta/error.hpp"
#include "pasta/prompt_protocol.hpp"

namespace pasta {

std::string format_fixed(double value, int decimals) {
    double r = round_half_away(value, decimals);
    if (r == 0.0) r = 0.0;  // no "-0.00"
    return fmt::format("{:.{}f}", r, decimals);
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(std::string_view field, std::size_t line) {
    const std::string s(trim(field));
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) {
        throw Error(ErrorCode::ParseError, fmt::format("line {}: not a number: '{}'", line, s));
    }
    return v;
}

std::size_t parse_count(std::string_view field, std::size_t line) {
    const std::string s(trim(field));
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw Error(ErrorCode::ParseError, fmt::format("line {}: not a count: '{}'", line, s));
    }
    return std::stoull(s);
}

}  // namespace

double information_gain(double final_score, double baseline_score, std::size_t n_pairs) {
    if (n_pairs == 0) {
        throw Error(ErrorCode::InvalidValue, "information gain needs n_pairs > 0");
    }
    return (final_score - baseline_score) / (static_cast<double>(n_pairs) / 1000.0);
}

double relative_improvement(double final_score, double baseline_score) {
    if (!(baseline_score > 0.0)) {
        throw Error(ErrorCode::InvalidValue, "relative improvement needs a positive baseline");
    }
    return 100.0 * (final_score - baseline_score) / baseline_score;
}

std::vector<BenchmarkScore> parse_scores_csv(std::string_view text) {
    std::vector<BenchmarkScore> out;
    std::size_t line_no = 0;
    bool header_seen = false;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty() || line.starts_with('#')) continue;
        const auto f = split(line, ',');
        if (!header_seen) {
            header_seen = true;
            if (f.size() == 4 && trim(f[0]) == "method" && trim(f[1]) == "benchmark" &&
                trim(f[2]) == "score" && trim(f[3]) == "n_pairs") {
                continue;
            }
            throw Error(ErrorCode::ParseError, "scores CSV must start with method,benchmark,score,n_pairs");
        }
        if (f.size() != 4) {
            throw Error(ErrorCode::ParseError, fmt::format("line {}: expected 4 fields, got {}", line_no, f.size()));
        }
        BenchmarkScore s{std::string(trim(f[0])), std::string(trim(f[1])), parse_double(f[2], line_no),
                         parse_count(f[3], line_no)};
        if (s.method.empty() || s.benchmark.empty()) {
            throw Error(ErrorCode::MissingField, fmt::format("line {}: empty method or benchmark", line_no));
        }
        if (s.score < 0.0 || s.score > 100.0) {
            throw Error(ErrorCode::InvalidValue, fmt::format("line {}: score outside [0, 100]", line_no));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string scores_csv(std::span<const BenchmarkScore> scores) {
    std::string out = "method,benchmark,score,n_pairs\n";
    for (const auto& s : scores) {
        out += fmt::format("{},{},{},{}\n", s.method, s.benchmark, s.score, s.n_pairs);
    }
    return out;
}

// ---------------------------------------------------------------- gains

const GainRow* GainReport::find(std::string_view benchmark, std::string_view method) const {
    for (const auto& r : rows) {
        if (r.benchmark == benchmark && r.method == method) return &r;
    }
    return nullptr;
}

const GainRatio* GainReport::ratio(std::string_view benchmark, std::string_view method,
                                   std::string_view versus) const {
    for (const auto& r : ratios) {
        if (r.benchmark == benchmark && r.method == method && r.versus == versus) return &r;
    }
    return nullptr;
}

std::string GainReport::to_csv() const {
    std::string out = "benchmark,method,score,baseline,n_pairs,gain_per_1k,relative_improvement_pct\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{}\n", r.benchmark, r.method, r.score, r.baseline,
                           r.n_pairs, format_fixed(r.gain, 2), format_fixed(r.relative_improvement, 2));
    }
    return out;
}

std::string GainReport::ratios_csv() const {
    std::string out = "benchmark,method,versus,ratio\n";
    for (const auto& r : ratios) {
        out += fmt::format("{},{},{},{}\n", r.benchmark, r.method, r.versus, format_fixed(r.ratio, 1));
    }
    return out;
}

std::string GainReport::summary() const {
    std::string out;
    std::string current;
    for (const auto& r : rows) {
        if (r.benchmark != current) {
            current = r.benchmark;
            out += current + " (baseline " + fmt::format("{}", r.baseline) + ")\n";
        }
        out += fmt::format("  {:<14} G = {:>6} per 1k pairs   {:>6}%\n", r.method,
                           format_fixed(r.gain, 2), format_fixed(r.relative_improvement, 2));
    }
    return out;
}

GainReport gain_report(std::span<const BenchmarkScore> scores, std::string_view baseline_method) {
    std::vector<std::string> benchmarks;
    std::vector<std::string> methods;
    std::map<std::string, double> baseline;
    for (const auto& s : scores) {
        if (std::find(benchmarks.begin(), benchmarks.end(), s.benchmark) == benchmarks.end()) {
            benchmarks.push_back(s.benchmark);
        }
        if (s.method == baseline_method) {
            baseline[s.benchmark] = s.score;
        } else if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) {
            methods.push_back(s.method);
        }
    }
    GainReport report;
    for (const auto& b : benchmarks) {
        const auto base = baseline.find(b);
        if (base == baseline.end()) {
            throw Error(ErrorCode::MissingBaseline,
                        "no " + std::string(baseline_method) + " score for benchmark " + b);
        }
        for (const auto& m : methods) {
            for (const auto& s : scores) {
                if (s.benchmark != b || s.method != m) continue;
                report.rows.push_back(GainRow{b, m, s.score, base->second, s.n_pairs,
                                              information_gain(s.score, base->second, s.n_pairs),
                                              relative_improvement(s.score, base->second)});
                break;
            }
        }
        for (const auto& num : report.rows) {
            if (num.benchmark != b) continue;
            for (const auto& den : report.rows) {
                if (den.benchmark != b || den.method == num.method || !(den.gain > 0.0)) continue;
                report.ratios.push_back(GainRatio{b, num.method, den.method, num.gain / den.gain});
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------- scaling

std::vector<ScalingCurve> scaling_report(std::span<const BenchmarkScore> points) {
    std::vector<ScalingCurve> curves;
    for (const auto& p : points) {
        auto it = std::find_if(curves.begin(), curves.end(), [&](const ScalingCurve& c) {
            return c.method == p.method && c.benchmark == p.benchmark;
        });
        if (it == curves.end()) {
            curves.push_back(ScalingCurve{p.method, p.benchmark, {}, {}});
            it = std::prev(curves.end());
        }
        for (const auto& q : it->points) {
            if (q.n_pairs == p.n_pairs) {
                throw Error(ErrorCode::DuplicatePoint,
                            fmt::format("{} / {} has two scores at n_pairs={}", p.method, p.benchmark,
                                        p.n_pairs));
            }
        }
        it->points.push_back(p);
    }
    for (auto& c : curves) {
        if (c.points.size() < 2) {
            throw Error(ErrorCode::InsufficientPoints,
                        c.method + " / " + c.benchmark + " needs at least two points");
        }
        std::sort(c.points.begin(), c.points.end(),
                  [](const BenchmarkScore& a, const BenchmarkScore& b) { return a.n_pairs < b.n_pairs; });
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            if (c.points[i].score < c.points[i - 1].score) c.degradations.push_back(i);
        }
    }
    return curves;
}

std::string scaling_csv(std::span<const ScalingCurve> curves) {
    std::string out = "method,benchmark,n_pairs,score,delta,degradation\n";
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            const bool flagged =
                std::find(c.degradations.begin(), c.degradations.end(), i) != c.degradations.end();
            const std::string d =
                i == 0 ? "" : format_fixed(c.points[i].score - c.points[i - 1].score, 2);
            out += fmt::format("{},{},{},{},{},{}\n", c.method, c.benchmark, c.points[i].n_pairs,
                               c.points[i].score, d, flagged ? 1 : 0);
        }
    }
    return out;
}

// ---------------------------------------------------------------- adversarial QA

std::string_view to_string(QuestionKind kind) noexcept {
    return kind == QuestionKind::AdvQuestion ? "adv_question" : "adv_options";
}

QuestionKind parse_question_kind(std::string_view text) {
    if (text == "adv_question") return QuestionKind::AdvQuestion;
    if (text == "adv_options") return QuestionKind::AdvOptions;
    throw Error(ErrorCode::UnknownKind, "unknown question kind '" + std::string(text) + "'");
}

RejectionRule::RejectionRule() : RejectionRule({"cannot be answered", "insufficient information"}) {}

RejectionRule::RejectionRule(std::vector<std::string> phrases) {
    if (phrases.empty()) throw Error(ErrorCode::InvalidValue, "rejection rule needs a phrase");
    for (auto& p : phrases) {
        auto t = lower(trim(p));
        if (t.empty()) throw Error(ErrorCode::InvalidValue, "rejection phrase is empty");
        phrases_.push_back(std::move(t));
    }
}

bool RejectionRule::matches(std::string_view response) const {
    const auto text = lower(response);
    return std::any_of(phrases_.begin(), phrases_.end(),
                       [&](const std::string& p) { return text.find(p) != std::string::npos; });
}

bool selects_none_of_the_above(std::string_view response) {
    return lower(response).find("none of the above") != std::string::npos;
}

std::vector<AdversarialResponse> parse_adversarial_jsonl(std::string_view text) {
    std::vector<AdversarialResponse> out;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            AdversarialResponse r;
            r.mode = parse_failure_mode(j.at("mode").get<std::string>());
            r.kind = parse_question_kind(j.at("kind").get<std::string>());
            r.response = j.at("response").get<std::string>();
            r.question = j.value("question", "");
            r.video_id = j.value("video_id", "");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::out_of_range& e) {
            throw Error(ErrorCode::MissingField, fmt::format("line {}: {}", line_no, e.what()));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, fmt::format("line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

std::string serialize(const AdversarialResponse& item) {
    nlohmann::ordered_json j;
    j["video_id"] = item.video_id;
    j["mode"] = to_string(item.mode);
    j["kind"] = to_string(item.kind);
    j["question"] = item.question;
    j["response"] = item.response;
    return j.dump();
}

std::string AdversarialReport::to_csv() const {
    std::string out = "mode,kind,total,correct,rate\n";
    for (FailureMode m : kAllModes) {
        for (QuestionKind k : {QuestionKind::AdvQuestion, QuestionKind::AdvOptions}) {
            const auto& c = at(m, k);
            out += fmt::format("{},{},{},{},{}\n", to_string(m), to_string(k), c.total, c.correct,
                               format_fixed(c.rate(), 1));
        }
    }
    return out;
}

std::string AdversarialReport::summary() const {
    std::string out = fmt::format("{:<28}{:>10}{:>10}\n", "mode", "question", "options");
    for (FailureMode m : kAllModes) {
        out += fmt::format("{:<28}{:>10}{:>10}\n", display_name(m),
                           format_fixed(at(m, QuestionKind::AdvQuestion).rate(), 1),
                           format_fixed(at(m, QuestionKind::AdvOptions).rate(), 1));
    }
    return out;
}

namespace {

void tally(AdversarialReport& report, const AdversarialResponse& r, bool correct) {
    auto& cell = report.cells[index_of(r.mode)][static_cast<std::size_t>(r.kind)];
    ++cell.total;
    if (correct) ++cell.correct;
}

}  // namespace

AdversarialReport adversarial_eval(std::span<const AdversarialResponse> responses,
                                   const RejectionRule& rules) {
    AdversarialReport report;
    for (const auto& r : responses) {
        tally(report, r,
              r.kind == QuestionKind::AdvQuestion ? rules.matches(r.response)
                                                  : selects_none_of_the_above(r.response));
    }
    return report;
}

ChatRequest qa_judge_request(const PromptLibrary& prompts, const AdversarialResponse& item) {
    ChatRequest req;
    req.system_text = std::string(protocol::kSystemText);
    req.user_text = prompts.render(TemplateId::AdversarialQaEval,
                                   {{"context", item.video_id.empty() ? "not provided" : item.video_id},
                                    {"question", item.question},
                                    {"response", item.response}});
    req.temperature = kVerificationTemperature;
    req.request_tag = "qa-eval/" + item.video_id + "/" + std::string(to_string(item.mode));
    return req;
}

AdversarialReport adversarial_eval_judged(std::span<const AdversarialResponse> responses,
                                          ChatBackend& judge, const PromptLibrary& prompts) {
    std::vector<std::size_t> judged;
    std::vector<ChatRequest> requests;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        if (responses[i].kind != QuestionKind::AdvQuestion) continue;
        judged.push_back(i);
        requests.push_back(qa_judge_request(prompts, responses[i]));
    }
    const auto completions = judge.complete_batch(requests);
    std::vector<bool> correct(responses.size(), false);
    for (std::size_t k = 0; k < judged.size(); ++k) {
        if (!completions[k].ok()) continue;
        for (auto line : split(*completions[k].text, '\n')) {
            auto t = lower(trim(line));
            const auto pos = t.find("judgment:");
            if (pos == std::string::npos) continue;
            auto v = trim(std::string_view(t).substr(pos + 9));
            if (v.starts_with('[')) v.remove_prefix(1);
            correct[judged[k]] = v.starts_with("correct");
            break;
        }
    }
    AdversarialReport report;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto& r = responses[i];
        tally(report, r,
              r.kind == QuestionKind::AdvQuestion ? correct[i] : selects_none_of_the_above(r.response));
    }
    return report;
}

std::vector<AdversarialQuestion> parse_adversarial_qa(std::string_view text) {
    std::vector<AdversarialQuestion> out;
    std::optional<AdversarialQuestion> block;
    auto close = [&] {
        if (block) {
            block->text = std::string(trim(block->text));
            if (!block->text.empty()) out.push_back(std::move(*block));
            block.reset();
        }
    };
    for (auto raw : split(text, '\n')) {
        auto line = trim(raw);
        if (line.starts_with("- ")) line = trim(line.substr(2));
        const auto open = line.find('[');
        const auto shut = line.find("]:");
        const bool header = line.starts_with("Adversarial Question [") ||
                            line.starts_with("Adversarial Options [");
        if (header && open != std::string_view::npos && shut != std::string_view::npos && shut > open) {
            close();
            const auto mode = mode_from_display_name(line.substr(open + 1, shut - open - 1));
            if (!mode) continue;
            const bool options = line.starts_with("Adversarial Options");
            AdversarialQuestion q{*mode, options ? QuestionKind::AdvOptions : QuestionKind::AdvQuestion,
                                  std::string(trim(line.substr(shut + 2)))};
            if (options) {
                block = std::move(q);
            } else if (!q.text.empty()) {
                out.push_back(std::move(q));
            }
            continue;
        }
        if (!block || line.empty()) continue;
        if (line.starts_with("Correct Answer")) {
            close();
            continue;
        }
        block->text += std::string(line) + "\n";
    }
    close();

    for (FailureMode m : kAllModes) {
        for (QuestionKind k : {QuestionKind::AdvQuestion, QuestionKind::AdvOptions}) {
            const bool found = std::any_of(out.begin(), out.end(), [&](const AdversarialQuestion& q) {
                return q.mode == m && q.kind == k;
            });
            if (!found) {
                throw Error(ErrorCode::ParseShortfall, fmt::format("generated set lacks {} for {}",
                                                                   to_string(k), to_string(m)));
            }
        }
    }
    return out;
}

ChatRequest qa_generation_request(const PromptLibrary& prompts, const VideoRef& video,
                                  std::vector<std::string> frames) {
    ChatRequest req;
    req.system_text = std::string(protocol::kSystemText);
    req.user_text = std::string(protocol::kVideoLine) + video.video_id + "\n\n" +
                    prompts.render(TemplateId::AdversarialQaGen, {});
    req.frames = std::move(frames);
    req.temperature = kGenerationTemperature;
    req.request_tag = "qa-gen/" + video.video_id;
    return req;
}

ChatRequest answer_request(const VideoRef& video, const AdversarialQuestion& question,
                           std::vector<std::string> frames) {
    ChatRequest req;
    req.system_text = std::string(protocol::kSystemText);
    req.user_text = std::string(protocol::kVideoLine) + video.video_id + "\n" +
                    std::string(protocol::kAnswerInstruction) + "\n" + question.text;
    req.frames = std::move(frames);
    req.temperature = kVerificationTemperature;
    req.request_tag = "qa-answer/" + video.video_id + "/" + std::string(to_string(question.mode)) +
                      "/" + std::string(to_string(question.kind));
    return req;
}

}  // namespace pasta
