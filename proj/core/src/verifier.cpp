// SPDX-License-Identifier: Apache-2.0
#include "pasta/verifier.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <set>
#include <utility>

#include "pasta/error.hpp"
#include "pasta/numeric.hpp"
#include "pasta/prompt_protocol.hpp"

namespace pasta {

namespace {

std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n*`\"'";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        out.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

// Judge prose without its verdict line, used as the retained record's note.
std::string note_from(std::string_view raw) {
    auto lines = lines_of(raw);
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (!lines.empty()) lines.pop_back();
    std::string note;
    for (auto l : lines) {
        const auto t = trim(l);
        if (t.empty()) continue;
        if (!note.empty()) note += ' ';
        note += t;
    }
    return note.empty() ? "RETAIN" : note;
}

std::pair<std::string, std::size_t> group_key(const CandidatePair& p) {
    return {p.video.video_id, p.query.query_index};
}

}  // namespace

std::string_view to_string(DiscardReason reason) noexcept {
    switch (reason) {
        case DiscardReason::PreferredInaccurate: return "PREFERRED_INACCURATE";
        case DiscardReason::AdversaryTooSimilar: return "ADVERSARY_TOO_SIMILAR";
        case DiscardReason::NoClearContradiction: return "NO_CLEAR_CONTRADICTION";
        case DiscardReason::ModeMistargeted: return "MODE_MISTARGETED";
        case DiscardReason::JudgeUnparseable: return "JUDGE_UNPARSEABLE";
    }
    return "JUDGE_UNPARSEABLE";
}

std::optional<DiscardReason> parse_discard_reason(std::string_view text) {
    for (DiscardReason r : kAllDiscardReasons) {
        if (text == to_string(r)) return r;
    }
    return std::nullopt;
}

Verdict parse_verdict(std::string_view judge_output) {
    std::string raw(judge_output);
    const auto lines = lines_of(judge_output);
    std::string_view last;
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        if (!trim(*it).empty()) {
            last = trim(*it);
            break;
        }
    }
    if (last == "RETAIN") {
        return Verdict::keep(std::move(raw));
    }
    constexpr std::string_view prefix = "DISCARD:";
    if (last.starts_with(prefix)) {
        if (auto r = parse_discard_reason(trim(last.substr(prefix.size())))) {
            return Verdict::discard(*r, std::move(raw));
        }
    }
    return Verdict::discard(DiscardReason::JudgeUnparseable, std::move(raw));
}

ChatRequest filter_request(const PromptLibrary& prompts, const CandidatePair& pair) {
    ChatRequest r;
    r.system_text = std::string(protocol::kSystemText);
    r.user_text = prompts.render(TemplateId::Filter,
                                 {{"query", pair.query.query_text},
                                  {"preferred", pair.preferred.text()},
                                  {"adversaries", "1. " + pair.adversarial.text()},
                                  {"mode", std::string(display_name(pair.mode))}});
    r.temperature = kVerificationTemperature;
    r.request_tag = "filter/" + pair.pair_id();
    return r;
}

namespace {

Verdict verdict_from(const Completion& c) {
    if (!c.ok()) {
        return Verdict::discard(DiscardReason::JudgeUnparseable,
                                "judge call failed: " + c.failure->message);
    }
    return parse_verdict(*c.text);
}

}  // namespace

Verdict verify_pair(const CandidatePair& pair, ChatBackend& judge, const PromptLibrary& prompts) {
    return verdict_from(judge.complete(filter_request(prompts, pair)));
}

std::size_t RetentionStats::discarded() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, count] : discarded_by_reason) n += count;
    return n;
}

std::string RetentionStats::to_json() const {
    nlohmann::ordered_json j;
    j["candidates"] = candidates;
    j["retained"] = retained;
    nlohmann::ordered_json by_reason = nlohmann::ordered_json::object();
    for (DiscardReason r : kAllDiscardReasons) {
        const auto it = discarded_by_reason.find(std::string(to_string(r)));
        by_reason[std::string(to_string(r))] = it == discarded_by_reason.end() ? 0 : it->second;
    }
    j["discarded_by_reason"] = std::move(by_reason);
    j["regenerations"] = regenerations;
    j["retention_rate"] = retention_rate();
    return j.dump(2);
}

std::string serialize(const RejectRecord& reject) {
    auto j = nlohmann::ordered_json::parse(serialize(reject.pair));
    j["verdict"] = "discard";
    j["reason"] = reject.verdict.reason ? to_string(*reject.verdict.reason) : "JUDGE_UNPARSEABLE";
    j["regenerations"] = reject.regenerations;
    j["judge_raw"] = reject.verdict.judge_raw;
    return j.dump();
}

FilterResult filter_dataset(std::span<const CandidatePair> candidates, ChatBackend& judge,
                            const PromptLibrary& prompts, const FilterPolicy& policy) {
    if (candidates.empty()) {
        throw Error(ErrorCode::InvalidValue, "filter_dataset needs at least one candidate");
    }
    std::vector<CandidatePair> pairs(candidates.begin(), candidates.end());
    std::vector<Verdict> verdicts(pairs.size());
    std::vector<std::size_t> regens(pairs.size(), 0);

    auto judge_indices = [&](const std::vector<std::size_t>& idx) {
        std::vector<ChatRequest> requests;
        requests.reserve(idx.size());
        for (std::size_t i : idx) requests.push_back(filter_request(prompts, pairs[i]));
        const auto completions = judge.complete_batch(requests);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            verdicts[idx[k]] = verdict_from(completions[k]);
        }
    };

    std::vector<std::size_t> all(pairs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    judge_indices(all);

    std::size_t regenerated = 0;
    if (policy.regenerate) {
        for (std::size_t round = 1; round <= policy.max_regen; ++round) {
            std::vector<std::size_t> redo;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const auto& v = verdicts[i];
                if (v.retain || !v.reason || !adversary_side(*v.reason)) continue;
                auto fresh = policy.regenerate(pairs[i], round);
                if (!fresh) continue;
                pairs[i].adversarial = std::move(*fresh);
                regens[i] = round;
                ++regenerated;
                redo.push_back(i);
            }
            if (redo.empty()) break;
            judge_indices(redo);
        }
    }

    std::set<std::pair<std::string, std::size_t>> bad_groups;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!verdicts[i].retain && verdicts[i].reason == DiscardReason::PreferredInaccurate) {
            bad_groups.insert(group_key(pairs[i]));
        }
    }

    FilterResult result;
    result.stats.candidates = pairs.size();
    result.stats.regenerations = regenerated;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Verdict v = std::move(verdicts[i]);
        if (v.retain && bad_groups.contains(group_key(pairs[i]))) {
            v = Verdict::discard(DiscardReason::PreferredInaccurate,
                                 "group discarded: preferred response judged inaccurate\n" +
                                     v.judge_raw);
        }
        if (v.retain) {
            result.retained.push_back(PreferenceRecord{pairs[i], note_from(v.judge_raw)});
        } else {
            ++result.stats.discarded_by_reason[std::string(to_string(*v.reason))];
            result.rejects.push_back(RejectRecord{std::move(pairs[i]), std::move(v), regens[i]});
        }
    }
    result.stats.retained = result.retained.size();
    return result;
}

// ---------------------------------------------------------------- targeting audit

ChatRequest audit_request(const PromptLibrary& prompts, const PreferenceRecord& record) {
    const auto& pair = record.pair;
    ChatRequest r;
    r.system_text = std::string(protocol::kSystemText);
    r.user_text = prompts.render(TemplateId::TargetingAudit,
                                 {{"query", pair.query.query_text},
                                  {"preferred", pair.preferred.text()},
                                  {"adversarial", pair.adversarial.text()},
                                  {"claimed_mode", std::string(kNeutralClaim)}});
    r.temperature = kVerificationTemperature;
    r.request_tag = "audit/" + pair.pair_id();
    return r;
}

AuditJudgment parse_audit(std::string_view judge_output) {
    AuditJudgment out;
    bool judged = false;
    for (auto line : lines_of(judge_output)) {
        auto t = trim(line);
        const auto colon = t.find(':');
        if (colon == std::string_view::npos) continue;
        const auto label = lower(trim(t.substr(0, colon)));
        auto value = trim(t.substr(colon + 1));
        if (value.starts_with('[') && value.ends_with(']')) {
            value = trim(value.substr(1, value.size() - 2));
        }
        if (label == "judgment" && !judged) {
            const auto v = lower(value);
            if (v == "yes" || v == "no") {
                out.yes = v == "yes";
                judged = true;
            }
        } else if (label == "failure mode" && !out.named_mode) {
            out.named_mode = mode_from_display_name(value);
        }
    }
    out.parsed = judged;
    return out;
}

double TargetingReport::average() const {
    double sum = 0.0;
    std::size_t present = 0;
    for (const auto& m : by_mode) {
        if (!m) continue;
        sum += m->fraction();
        ++present;
    }
    return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

std::string TargetingReport::to_text() const {
    std::string out;
    for (FailureMode mode : kAllModes) {
        const auto& m = by_mode[index_of(mode)];
        out += std::string(display_name(mode)) + ": ";
        out += m ? format_fixed(100.0 * m->fraction(), 1) + "% (" + std::to_string(m->yes) + "/" +
                       std::to_string(m->total) + ", unparseable " +
                       std::to_string(m->unparseable) + ")"
                 : std::string("absent");
        out += '\n';
    }
    out += "Average: " + format_fixed(100.0 * average(), 1) + "%\n";
    return out;
}

std::string TargetingReport::to_json() const {
    nlohmann::ordered_json j;
    for (FailureMode mode : kAllModes) {
        const auto& m = by_mode[index_of(mode)];
        if (!m) {
            j[std::string(to_string(mode))] = nullptr;
            continue;
        }
        j[std::string(to_string(mode))] = {{"total", m->total},
                                           {"yes", m->yes},
                                           {"unparseable", m->unparseable},
                                           {"accuracy", m->fraction()}};
    }
    j["average"] = average();
    return j.dump(2);
}

TargetingReport targeting_accuracy(std::span<const PreferenceRecord> sample, ChatBackend& judge,
                                   const PromptLibrary& prompts) {
    if (sample.empty()) {
        throw Error(ErrorCode::InvalidValue, "targeting audit needs a non-empty sample");
    }
    std::vector<ChatRequest> requests;
    requests.reserve(sample.size());
    for (const auto& r : sample) requests.push_back(audit_request(prompts, r));
    const auto completions = judge.complete_batch(requests);

    TargetingReport report;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        auto& slot = report.by_mode[index_of(sample[i].mode())];
        if (!slot) slot.emplace();
        ++slot->total;
        const AuditJudgment a =
            completions[i].ok() ? parse_audit(*completions[i].text) : AuditJudgment{};
        if (!a.parsed) {
            ++slot->unparseable;
        } else if (a.yes && a.named_mode == sample[i].mode()) {
            ++slot->yes;
        }
    }
    return report;
}

}  // namespace pasta
