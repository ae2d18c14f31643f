// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <fstream>
#include <json.hpp>
#include <random>
#include <cctype>
#include <cstdlib>
#include <set>

#include "pasta/core_model.hpp"
#include "pasta/error.hpp"
#include "pasta/hashing.hpp"
#include "pasta/model_backend.hpp"
#include "pasta/prompt_protocol.hpp"

namespace pasta {

namespace {

namespace proto = protocol;

bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

// mt19937_64 output is fixed by the standard; only raw draws are used so the
// text is identical on every platform.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(seed) {}

    template <std::size_t N>
    std::string_view pick(const std::array<std::string_view, N>& options) {
        return options[static_cast<std::size_t>(engine_() % N)];
    }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

constexpr std::array<std::string_view, 8> kObjects = {
    "the red bicycle", "a wooden table", "the person in a blue jacket", "a ceramic bowl",
    "the parked car", "a tall lamp",     "the black dog",               "a stack of boxes"};
constexpr std::array<std::string_view, 6> kActions = {
    "picks up a tool", "walks to the counter", "opens the door",
    "stirs the pot",   "waves at the camera",  "sets the plate down"};

constexpr std::array<std::string_view, 5> kSpatialStems = {
    "Which object is partially hidden behind {}?",
    "Which item appears closest to the camera, {} or the background shelf?",
    "Is {} in the left or right third of the frame?",
    "What is in the foreground relative to {}?",
    "Is {} near the top or bottom edge of the frame?"};
constexpr std::array<std::string_view, 5> kTemporalStems = {
    "Which happens first: someone {} or the camera pans?",
    "Does the person finish before someone {}?",
    "When does the subject switch activities after someone {}?",
    "Is the second event a direct result of someone who {}?",
    "Does anything happen at the same time as someone {}?"};
constexpr std::array<std::string_view, 5> kCrossframeStems = {
    "Does {} appear in both the opening and closing scenes?",
    "Does the person near {} return in a later segment?",
    "Does the setting around {} change over time?",
    "Is the action involving {} repeated later in the video?",
    "Does the early shot of {} hint at the ending?"};

std::string fill(std::string_view stem, std::string_view value) {
    std::string out(stem);
    if (auto pos = out.find("{}"); pos != std::string::npos) {
        out.replace(pos, 2, value);
    }
    return out;
}

FailureMode prompt_mode(std::string_view prompt) {
    if (contains(prompt, "cross-frame") || contains(prompt, "Cross-Frame")) return FailureMode::Crossframe;
    if (contains(prompt, "temporal reasoning")) return FailureMode::Temporal;
    return FailureMode::Spatial;
}

// Misalignment keywords the mock embeds in adversarial text and reads back when auditing.
FailureMode keyword_mode(std::string_view text) {
    for (std::string_view k : {"unrelated", "completely different", "no connection", "never reappear"}) {
        if (contains(text, k)) return FailureMode::Crossframe;
    }
    for (std::string_view k : {"all at once", "at the same time", "single continuous", "reverse order"}) {
        if (contains(text, k)) return FailureMode::Temporal;
    }
    return FailureMode::Spatial;
}

std::string extract_after(std::string_view text, std::string_view marker) {
    const auto pos = text.find(marker);
    if (pos == std::string_view::npos) return {};
    const auto start = pos + marker.size();
    const auto end = text.find('\n', start);
    return std::string(text.substr(start, end == std::string_view::npos ? end : end - start));
}

std::set<std::string> word_set(std::string_view text) {
    std::set<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && !cur.starts_with("[ref")) words.insert(cur);
        cur.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '[') {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    return words;
}

// Jaccard overlap of word sets, ignoring ref tags.
double overlap(std::string_view a, std::string_view b) {
    const auto wa = word_set(a);
    const auto wb = word_set(b);
    std::size_t common = 0;
    for (const auto& w : wa) common += wb.count(w);
    const std::size_t uni = wa.size() + wb.size() - common;
    return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

std::string ref_tag(const std::string& key) {
    return " [ref:" + key.substr(0, 10) + "]";
}

std::string query_list(Stream& rng, FailureMode mode, std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string q;
        switch (mode) {
            case FailureMode::Spatial: q = fill(rng.pick(kSpatialStems), rng.pick(kObjects)); break;
            case FailureMode::Temporal: q = fill(rng.pick(kTemporalStems), rng.pick(kActions)); break;
            case FailureMode::Crossframe: q = fill(rng.pick(kCrossframeStems), rng.pick(kObjects)); break;
        }
        out += std::to_string(i + 1) + ". " + q + "\n";
    }
    return out;
}

std::string preferred_text(Stream& rng, const std::string& key, std::size_t frames) {
    return "Across the " + std::to_string(frames) + " sampled frames, " +
           std::string(rng.pick(kObjects)) + " stays partly behind " +
           std::string(rng.pick(kObjects)) + " while someone " + std::string(rng.pick(kActions)) +
           ", and later someone " + std::string(rng.pick(kActions)) +
           "; the same objects persist into the final scene." + ref_tag(key);
}

std::string adversarial_text(Stream& rng, const std::string& key, FailureMode mode) {
    std::string body;
    switch (mode) {
        case FailureMode::Spatial:
            body = "Every object, including " + std::string(rng.pick(kObjects)) +
                   ", is fully visible and equidistant from the camera; nothing is in front of anything else.";
            break;
        case FailureMode::Temporal:
            body = "Everything happens all at once: someone " + std::string(rng.pick(kActions)) +
                   " at the same time as someone " + std::string(rng.pick(kActions)) +
                   ", as a single continuous action.";
            break;
        case FailureMode::Crossframe:
            body = "The opening shot of " + std::string(rng.pick(kObjects)) +
                   " and the closing shot show completely different, unrelated objects; the people never reappear.";
            break;
    }
    return body + ref_tag(key);
}

std::string qa_set(Stream& rng) {
    std::string out;
    for (FailureMode mode : kAllModes) {
        out += "Adversarial Question [" + std::string(display_name(mode)) + "]: How many people stand behind " +
               std::string(rng.pick(kObjects)) + " after the fireworks start?\n";
    }
    for (FailureMode mode : kAllModes) {
        out += "Adversarial Options [" + std::string(display_name(mode)) + "]:\n";
        out += "Question: What colour is " + std::string(rng.pick(kObjects)) + " in the last scene?\n";
        out += "Options:\nA. Green.\nB. Purple.\nC. Orange.\nD. Silver.\n";
        out += "Correct Answer: None of the Above.\n";
    }
    return out;
}

}  // namespace

MockBackend::MockBackend(BackendConfig config) : ChatBackend(std::move(config)) {}

std::string MockBackend::id() const {
    return "mock:seed=" + std::to_string(config().seed);
}

void MockBackend::add_canned(std::string key, std::string response) {
    canned_.insert_or_assign(std::move(key), std::move(response));
}

void MockBackend::load_replay(const std::filesystem::path& path) {
    for (const auto& line : read_lines(path)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            add_canned(j.at("key").get<std::string>(), j.at("response").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "replay file " + path.string() + ": " + e.what());
        }
    }
}

void MockBackend::poison(std::string key) {
    poisoned_.insert(std::move(key));
}

void MockBackend::set_responder(Responder responder) {
    responder_ = std::move(responder);
}

std::string MockBackend::synthesize(const ChatRequest& request) const {
    const std::string key = prompt_key(request);
    Stream rng(hash64(key) ^ (config().seed * 0x9E3779B97F4A7C15ULL));
    const std::string_view prompt = request.user_text;

    if (contains(prompt, proto::kFilterVerdictLine)) {
        const auto preferred = extract_after(prompt, "Preferred response: ");
        const auto adversary = extract_after(prompt, "Adversarial responses:\n1. ");
        if (overlap(preferred, adversary) >= 0.6) {
            return "The adversarial response restates the preferred one.\nDISCARD:ADVERSARY_TOO_SIMILAR";
        }
        return "All criteria hold.\nRETAIN";
    }
    if (contains(prompt, proto::kAuditJudgmentLine)) {
        const auto adversarial = extract_after(prompt, "Adversarial Example: ");
        return "Judgment: Yes\nFailure Mode: " + std::string(display_name(keyword_mode(adversarial))) +
               "\nReasoning: The example contradicts the preferred response.";
    }
    if (contains(prompt, proto::kQaEvalJudgmentLine)) {
        const auto response = extract_after(prompt, "Model response: ");
        const bool rejected = contains(response, "cannot be answered") ||
                              contains(response, "insufficient information");
        return std::string("Judgment: ") + (rejected ? "CORRECT" : "INCORRECT") +
               "\nReasoning: Scored by rejection phrasing.\nRejection Keywords Identified: " +
               (rejected ? "cannot be answered" : "none");
    }
    if (contains(prompt, proto::kQaGenFormatLine)) {
        return qa_set(rng);
    }
    if (contains(prompt, proto::kAnswerInstruction)) {
        const bool options = contains(prompt, "Options:");
        const bool refuse = rng.next() % 2 == 0;
        if (options) {
            return refuse ? std::string(proto::kNoneOfTheAbove) : std::string(rng.pick(
                                std::array<std::string_view, 4>{"A", "B", "C", "D"}));
        }
        return refuse ? "This cannot be answered from the video."
                      : "Three people are standing there.";
    }
    if (const auto pos = prompt.find(proto::kQueryListInstruction); pos != std::string_view::npos) {
        const std::size_t n = std::strtoul(
            std::string(prompt.substr(pos + proto::kQueryListInstruction.size())).c_str(), nullptr, 10);
        return query_list(rng, prompt_mode(prompt), n);
    }
    if (contains(prompt, proto::kAdversarialInstruction)) {
        const auto instruction = extract_after(prompt, proto::kAdversarialInstruction);
        return adversarial_text(rng, key, keyword_mode(instruction));
    }
    return preferred_text(rng, key, request.frames.size());
}

ChatBackend::Attempt MockBackend::attempt_once(const ChatRequest& request) {
    Attempt attempt;
    const std::string key = prompt_key(request);
    if (poisoned_.contains(key)) {
        attempt.failure = BackendFailure{FailureKind::HttpStatus, true, 503, "poisoned prompt " + key};
        return attempt;
    }
    if (responder_) {
        if (auto reply = responder_(request)) {
            attempt.text = std::move(reply);
            return attempt;
        }
    }
    if (auto it = canned_.find(key); it != canned_.end()) {
        attempt.text = it->second;
        return attempt;
    }
    if (config().replay_strict) {
        attempt.failure = BackendFailure{FailureKind::ReplayMiss, false, 0,
                                         "prompt " + key + " not in replay corpus"};
        return attempt;
    }
    attempt.text = synthesize(request);
    return attempt;
}

}  // namespace pasta
