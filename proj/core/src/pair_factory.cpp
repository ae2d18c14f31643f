// SPDX-License-Identifier: Apache-2.0
#include "pasta/pair_factory.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "pasta/error.hpp"
#include "pasta/prompt_protocol.hpp"

namespace pasta {

namespace proto = protocol;

void FactoryConfig::validate() const {
    if (queries_per_video < 1) {
        throw Error(ErrorCode::InvalidValue, "queries_per_video must be >= 1");
    }
    if (adversaries_per_query < 1 || adversaries_per_query > 5) {
        throw Error(ErrorCode::InvalidValue, "adversaries_per_query must be in [1, 5]");
    }
    if (dense_cap < 1) {
        throw Error(ErrorCode::InvalidValue, "dense_cap must be >= 1");
    }
    if (!(sparse_fps > 0.0)) {
        throw Error(ErrorCode::InvalidValue, "sparse_fps must be positive");
    }
}

// ---------------------------------------------------------------- sampling

std::vector<std::size_t> select_frames(const VideoRef& video, SamplingMode mode, double rate,
                                       std::size_t cap) {
    const std::size_t n = video.frames.size();
    if (n == 0) {
        throw Error(ErrorCode::EmptyManifest, video.video_id + " has an empty frame manifest");
    }
    if (!(rate > 0.0)) {
        throw Error(ErrorCode::InvalidValue, "sampling rate must be positive");
    }
    std::vector<std::size_t> out;
    if (mode == SamplingMode::Dense) {
        const auto want = std::min<std::size_t>({n, static_cast<std::size_t>(rate), cap});
        out.reserve(want);
        for (std::size_t i = 0; i < std::max<std::size_t>(want, 1); ++i) {
            out.push_back(i * n / std::max<std::size_t>(want, 1));
        }
    } else {
        const double fps = video.native_fps.value();
        auto seconds = static_cast<std::size_t>(std::floor(video.duration_s * rate + 1e-9));
        seconds = std::max<std::size_t>(seconds, 1);
        const std::size_t count = std::min(seconds, cap);
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            // When capped, spread the samples evenly across the available seconds.
            const std::size_t slot = k * seconds / count;
            const auto idx =
                static_cast<std::size_t>(std::floor(static_cast<double>(slot) / rate * fps + 1e-9));
            out.push_back(std::min(idx, n - 1));
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

SamplingSpec dense_sampling(const VideoRef& video, FailureMode mode, const FactoryConfig& config) {
    SamplingSpec spec;
    spec.mode = SamplingMode::Dense;
    spec.rate = static_cast<double>(config.dense_cap);
    switch (mode) {
        case FailureMode::Spatial: spec.strategy = "even"; break;
        case FailureMode::Temporal: spec.strategy = "native"; break;
        case FailureMode::Crossframe: spec.strategy = "uniform"; break;
    }
    spec.realized_frames = select_frames(video, SamplingMode::Dense, spec.rate);
    return spec;
}

SamplingSpec sparse_sampling(const VideoRef& video, const FactoryConfig& config) {
    SamplingSpec spec;
    spec.mode = SamplingMode::Sparse;
    spec.rate = config.sparse_fps;
    spec.strategy = "fps";
    spec.realized_frames =
        select_frames(video, SamplingMode::Sparse, config.sparse_fps, config.dense_cap);
    return spec;
}

std::vector<FailureMode> query_mode_plan(std::size_t queries_per_video) {
    std::vector<FailureMode> plan;
    plan.reserve(queries_per_video);
    for (std::size_t i = 0; i < queries_per_video; ++i) {
        plan.push_back(kAllModes[i % kAllModes.size()]);
    }
    return plan;
}

std::vector<std::string> parse_numbered_list(std::string_view text) {
    std::vector<std::string> items;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;

        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string_view::npos) continue;
        line.remove_prefix(first);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);

        std::size_t body = 0;
        if (line.front() == '-' || line.front() == '*') {
            body = 1;
        } else if (std::isdigit(static_cast<unsigned char>(line.front()))) {
            std::size_t i = 0;
            while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
            if (i < line.size() && (line[i] == '.' || line[i] == ')')) {
                body = i + 1;
            } else {
                continue;
            }
        } else {
            continue;
        }
        line.remove_prefix(body);
        const auto text_start = line.find_first_not_of(" \t");
        if (text_start == std::string_view::npos) continue;
        items.emplace_back(line.substr(text_start));
        if (end == text.size()) break;
    }
    return items;
}

namespace {

constexpr std::array<std::string_view, 3> kSpatialVariants = {
    "Claim that every object is fully visible, even those partially hidden behind others.",
    "Insist that all objects are equidistant from the camera.",
    "Swap left and right positions and place background objects in the foreground."};
constexpr std::array<std::string_view, 3> kTemporalVariants = {
    "Claim the actions happen all at once, ignoring clear time gaps.",
    "Collapse multiple sequential events into a single continuous action.",
    "Describe the events in reverse order, breaking their causal links."};
constexpr std::array<std::string_view, 3> kCrossframeVariants = {
    "Insist that objects recurring in different scenes are completely different.",
    "Claim that characters present at both the start and end have no connection.",
    "Treat identical objects in different scenes as unrelated entities."};

std::string video_line(const VideoRef& video) {
    return std::string(proto::kVideoLine) + video.video_id + "\n";
}

}  // namespace

std::span<const std::string_view> adversarial_variants(FailureMode mode) {
    switch (mode) {
        case FailureMode::Spatial: return kSpatialVariants;
        case FailureMode::Temporal: return kTemporalVariants;
        case FailureMode::Crossframe: return kCrossframeVariants;
    }
    return kSpatialVariants;
}

TemplateId generation_template(FailureMode mode) noexcept {
    switch (mode) {
        case FailureMode::Spatial: return TemplateId::SpatialGen;
        case FailureMode::Temporal: return TemplateId::TemporalGen;
        case FailureMode::Crossframe: return TemplateId::CrossframeGen;
    }
    return TemplateId::SpatialGen;
}

// ---------------------------------------------------------------- report

std::string RunReport::to_json() const {
    nlohmann::ordered_json j;
    j["videos"] = videos;
    j["expected_candidates"] = expected_candidates;
    j["emitted_candidates"] = emitted_candidates;
    j["missing_candidates"] = expected_candidates - emitted_candidates;
    j["failures_by_stage"] = failures_by_stage;
    auto list = nlohmann::ordered_json::array();
    for (const auto& f : failures) {
        nlohmann::ordered_json e;
        e["stage"] = f.stage;
        e["video_id"] = f.video_id;
        e["mode"] = f.mode ? nlohmann::ordered_json(to_string(*f.mode)) : nullptr;
        e["query_index"] = f.query_index ? nlohmann::ordered_json(*f.query_index) : nullptr;
        e["adversary_index"] =
            f.adversary_index ? nlohmann::ordered_json(*f.adversary_index) : nullptr;
        e["missing_candidates"] = f.missing_candidates;
        e["message"] = f.message;
        list.push_back(std::move(e));
    }
    j["failures"] = std::move(list);
    return j.dump(2);
}

// ---------------------------------------------------------------- factory

PairFactory::PairFactory(ChatBackend& backend, const PromptLibrary& prompts, FactoryConfig config,
                         FrameLoader loader)
    : backend_(backend), prompts_(prompts), config_(config), loader_(std::move(loader)) {
    config_.validate();
    if (!loader_) {
        throw Error(ErrorCode::InvalidValue, "frame loader is required");
    }
}

std::vector<std::string> PairFactory::payloads(const VideoRef& video,
                                               const SamplingSpec& spec) const {
    std::vector<std::string> out;
    out.reserve(spec.realized_frames.size());
    for (std::size_t idx : spec.realized_frames) {
        out.push_back(loader_(video, idx));
    }
    return out;
}

std::string PairFactory::call(const ChatRequest& request, std::string_view stage,
                              const std::string& video_id) const {
    Completion c = backend_.complete(request);
    if (!c.ok()) {
        const auto& f = *c.failure;
        throw Error(ErrorCode::StageFailure,
                    std::string(stage) + " failed for video " + video_id + " after " +
                        std::to_string(c.attempts) + " attempt(s): " +
                        std::string(to_string(f.kind)) + " " + f.message);
    }
    return *c.text;
}

ChatRequest PairFactory::query_request(const VideoRef& video, FailureMode mode,
                                       std::size_t count) const {
    ChatRequest r;
    r.system_text = std::string(proto::kSystemText);
    r.user_text = video_line(video) + "\n" + prompts_.render(generation_template(mode), {}) +
                  "\n" + std::string(proto::kQueryListInstruction) + std::to_string(count) +
                  " items.";
    r.frames = payloads(video, dense_sampling(video, mode, config_));
    r.temperature = config_.temperature;
    r.request_tag = "queries/" + video.video_id + "/" + std::string(to_string(mode));
    return r;
}

ChatRequest PairFactory::preferred_request(const VideoRef& video, const QueryRecord& query) const {
    ChatRequest r;
    r.system_text = std::string(proto::kSystemText);
    r.user_text = video_line(video) + std::string(proto::kQueryLine) + query.query_text + "\n" +
                  std::string(proto::kPreferredInstruction);
    r.frames = payloads(video, dense_sampling(video, query.mode, config_));
    r.temperature = config_.temperature;
    r.request_tag = "preferred/" + video.video_id + "/" + std::to_string(query.query_index);
    return r;
}

ChatRequest PairFactory::adversary_request(const VideoRef& video, const QueryRecord& query,
                                           std::size_t adversary_index,
                                           std::size_t attempt) const {
    const auto variants = adversarial_variants(query.mode);
    ChatRequest r;
    r.system_text = std::string(proto::kSystemText);
    r.user_text = video_line(video) + std::string(proto::kQueryLine) + query.query_text + "\n" +
                  std::string(proto::kAdversarialInstruction) +
                  std::string(variants[adversary_index % variants.size()]);
    if (attempt > 0) {
        r.user_text += "\nRegeneration attempt: " + std::to_string(attempt);
    }
    r.frames = payloads(video, sparse_sampling(video, config_));
    r.temperature = config_.temperature;
    r.request_tag = "adversarial/" + video.video_id + "/" + std::to_string(query.query_index) +
                    "/" + std::to_string(adversary_index) + "/" + std::to_string(attempt);
    return r;
}

std::vector<QueryRecord> PairFactory::generate_queries(const VideoRef& video, FailureMode mode,
                                                       std::size_t count) const {
    if (count == 0) {
        return {};
    }
    const std::string reply = call(query_request(video, mode, count), "queries", video.video_id);
    auto items = parse_numbered_list(reply);
    if (items.size() < count) {
        throw Error(ErrorCode::ParseShortfall,
                    video.video_id + "/" + std::string(to_string(mode)) + ": expected " +
                        std::to_string(count) + " questions, parsed " +
                        std::to_string(items.size()));
    }
    std::vector<QueryRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(QueryRecord{video.video_id, mode, items[i],
                                  std::string(to_string(generation_template(mode))), i});
    }
    return out;
}

ResponseRecord PairFactory::generate_preferred(const VideoRef& video,
                                               const QueryRecord& query) const {
    auto spec = dense_sampling(video, query.mode, config_);
    std::string text = call(preferred_request(video, query), "preferred", video.video_id);
    return ResponseRecord(std::move(text), std::move(spec), ResponseRole::Preferred, backend_.id());
}

ResponseRecord PairFactory::generate_adversary(const VideoRef& video, const QueryRecord& query,
                                               std::size_t adversary_index,
                                               std::size_t attempt) const {
    auto spec = sparse_sampling(video, config_);
    std::string text = call(adversary_request(video, query, adversary_index, attempt),
                            "adversarial", video.video_id);
    return ResponseRecord(std::move(text), std::move(spec), ResponseRole::Adversarial,
                          backend_.id());
}

std::vector<ResponseRecord> PairFactory::generate_adversaries(const VideoRef& video,
                                                              const QueryRecord& query) const {
    std::vector<ResponseRecord> out;
    out.reserve(config_.adversaries_per_query);
    for (std::size_t k = 0; k < config_.adversaries_per_query; ++k) {
        out.push_back(generate_adversary(video, query, k));
    }
    return out;
}

BuildResult PairFactory::build_candidates(std::span<const VideoRef> videos) const {
    struct VideoOutput {
        std::vector<CandidatePair> pairs;
        std::vector<StageFailure> failures;
    };
    std::vector<VideoOutput> per_video(videos.size());
    const auto plan = query_mode_plan(config_.queries_per_video);
    const std::size_t per_query = config_.adversaries_per_query;

    auto run_video = [&](std::size_t v) {
        const VideoRef& video = videos[v];
        VideoOutput& out = per_video[v];
        for (FailureMode mode : kAllModes) {
            std::vector<std::size_t> slots;
            for (std::size_t i = 0; i < plan.size(); ++i) {
                if (plan[i] == mode) slots.push_back(i);
            }
            std::vector<QueryRecord> queries;
            try {
                queries = generate_queries(video, mode, slots.size());
            } catch (const Error& e) {
                out.failures.push_back({"queries", video.video_id, mode, std::nullopt, std::nullopt,
                                        slots.size() * per_query, e.what()});
                continue;
            }
            for (std::size_t j = 0; j < queries.size(); ++j) {
                QueryRecord& query = queries[j];
                query.query_index = slots[j];
                std::optional<ResponseRecord> preferred;
                try {
                    preferred = generate_preferred(video, query);
                } catch (const Error& e) {
                    out.failures.push_back({"preferred", video.video_id, mode, query.query_index,
                                            std::nullopt, per_query, e.what()});
                    continue;
                }
                for (std::size_t k = 0; k < per_query; ++k) {
                    try {
                        auto adversary = generate_adversary(video, query, k);
                        if (adversary.text() == preferred->text()) {
                            throw Error(ErrorCode::IdenticalResponses,
                                        "adversary repeats the preferred text");
                        }
                        out.pairs.push_back(
                            CandidatePair{video, query, *preferred, std::move(adversary), mode, k});
                    } catch (const Error& e) {
                        out.failures.push_back({"adversarial", video.video_id, mode,
                                                query.query_index, k, 1, e.what()});
                    }
                }
            }
        }
    };

    const std::size_t workers = std::min<std::size_t>(
        static_cast<std::size_t>(backend_.config().max_in_flight), videos.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t v = next.fetch_add(1); v < videos.size(); v = next.fetch_add(1)) {
            run_video(v);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    BuildResult result;
    result.report.videos = videos.size();
    result.report.expected_candidates = videos.size() * config_.queries_per_video * per_query;
    for (auto& vo : per_video) {
        for (auto& p : vo.pairs) result.candidates.push_back(std::move(p));
        for (auto& f : vo.failures) {
            ++result.report.failures_by_stage[f.stage];
            result.report.failures.push_back(std::move(f));
        }
    }
    std::sort(result.candidates.begin(), result.candidates.end(),
              [](const CandidatePair& a, const CandidatePair& b) {
                  return std::tie(a.video.video_id, a.query.query_index, a.mode, a.adversary_index) <
                         std::tie(b.video.video_id, b.query.query_index, b.mode, b.adversary_index);
              });
    std::stable_sort(result.report.failures.begin(), result.report.failures.end(),
                     [](const StageFailure& a, const StageFailure& b) {
                         return std::tie(a.video_id, a.query_index, a.adversary_index) <
                                std::tie(b.video_id, b.query_index, b.adversary_index);
                     });
    result.report.emitted_candidates = result.candidates.size();
    return result;
}

}  // namespace pasta
