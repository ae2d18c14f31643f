// SPDX-License-Identifier: Apache-2.0
//
// Candidate generation: per-mode queries, preferred responses under dense
// frame sampling, adversarial responses under sparse sampling.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
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

struct FactoryConfig {
    std::size_t queries_per_video = 10;
    std::size_t adversaries_per_query = 3;
    std::size_t dense_cap = 32;
    double sparse_fps = 1.0;
    int max_edge_px = 448;
    double temperature = kGenerationTemperature;

    /// Throws Error(InvalidValue); adversaries_per_query must lie in [1, 5].
    void validate() const;
};

/// Frame indices for one sampling policy.
///   dense:  all frames if the manifest has at most `rate` of them, else `rate`
///           evenly spaced indices floor(i * n / rate).
///   sparse: one index per 1/`rate` seconds of duration, floor(k / rate * fps).
/// Both sorted ascending and deduplicated. Throws Error(EmptyManifest).
/// `cap` bounds the sparse count; capped samples are spread evenly over the seconds.
std::vector<std::size_t> select_frames(const VideoRef& video, SamplingMode mode, double rate,
                                       std::size_t cap = static_cast<std::size_t>(-1));

/// Dense spec for preferred responses. Strategy label follows the query mode:
/// spatial "even", temporal "native", crossframe "uniform".
SamplingSpec dense_sampling(const VideoRef& video, FailureMode mode, const FactoryConfig& config);
SamplingSpec sparse_sampling(const VideoRef& video, const FactoryConfig& config);

/// Returns a base64 frame payload for `video.frames[index]`.
using FrameLoader = std::function<std::string(const VideoRef& video, std::size_t index)>;
/// Decodes, downscales to `max_edge_px` on the longest edge, re-encodes as JPEG.
std::string encode_frame(const std::filesystem::path& path, int max_edge_px);
FrameLoader file_frame_loader(int max_edge_px);
/// Tiny synthetic payloads; for offline runs over manifests without images.
FrameLoader placeholder_frame_loader();

/// Failure mode of each query slot: index i gets mode i mod 3, so 10 queries
/// split 4/3/3.
std::vector<FailureMode> query_mode_plan(std::size_t queries_per_video);

/// Accepts "1." / "1)" / "-" / "*" bullets; unbulleted lines are ignored.
std::vector<std::string> parse_numbered_list(std::string_view text);

/// Mode-specific misalignment instructions; adversary k of a query uses variant k mod count.
std::span<const std::string_view> adversarial_variants(FailureMode mode);

TemplateId generation_template(FailureMode mode) noexcept;

struct StageFailure {
    std::string stage;  // "queries" | "preferred" | "adversarial"
    std::string video_id;
    std::optional<FailureMode> mode;
    std::optional<std::size_t> query_index;
    std::optional<std::size_t> adversary_index;
    std::size_t missing_candidates = 0;
    std::string message;
};

struct RunReport {
    std::size_t videos = 0;
    std::size_t expected_candidates = 0;
    std::size_t emitted_candidates = 0;
    std::map<std::string, std::size_t> failures_by_stage;
    std::vector<StageFailure> failures;

    std::string to_json() const;
};

struct BuildResult {
    std::vector<CandidatePair> candidates;
    RunReport report;
};

class PairFactory {
public:
    PairFactory(ChatBackend& backend, const PromptLibrary& prompts, FactoryConfig config,
                FrameLoader loader);

    /// `count` queries for one mode, query_index 0..count-1. count == 0 makes
    /// no backend call. Throws Error(StageFailure) after retries, or
    /// Error(ParseShortfall) when fewer than `count` questions parse.
    std::vector<QueryRecord> generate_queries(const VideoRef& video, FailureMode mode,
                                              std::size_t count) const;

    ResponseRecord generate_preferred(const VideoRef& video, const QueryRecord& query) const;

    /// adversaries_per_query sparse-sampled responses, variants cycled round-robin.
    std::vector<ResponseRecord> generate_adversaries(const VideoRef& video,
                                                     const QueryRecord& query) const;
    /// One adversary with an explicit variant slot; `attempt` > 0 marks a regeneration.
    ResponseRecord generate_adversary(const VideoRef& video, const QueryRecord& query,
                                      std::size_t adversary_index, std::size_t attempt = 0) const;

    /// Runs every stage for every video. Stage failures are recorded and the
    /// run continues; output is sorted by (video_id, query_index, mode, adversary_index).
    BuildResult build_candidates(std::span<const VideoRef> videos) const;

    /// Requests exactly as sent; exposed so fixtures can poison specific prompts.
    ChatRequest query_request(const VideoRef& video, FailureMode mode, std::size_t count) const;
    ChatRequest preferred_request(const VideoRef& video, const QueryRecord& query) const;
    ChatRequest adversary_request(const VideoRef& video, const QueryRecord& query,
                                  std::size_t adversary_index, std::size_t attempt = 0) const;

    const FactoryConfig& config() const noexcept { return config_; }

private:
    std::vector<std::string> payloads(const VideoRef& video, const SamplingSpec& spec) const;
    std::string call(const ChatRequest& request, std::string_view stage,
                     const std::string& video_id) const;

    ChatBackend& backend_;
    const PromptLibrary& prompts_;
    FactoryConfig config_;
    FrameLoader loader_;
};

}  // namespace pasta
