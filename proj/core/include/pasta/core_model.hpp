// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for every pipeline stage: failure modes, video
// references, query/response records, candidate pairs and the retained
// preference records that make up a partitioned training dataset.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pasta {

inline constexpr std::string_view kSchemaVersion = "pasta/1";

enum class FailureMode : std::uint8_t { Spatial = 0, Temporal = 1, Crossframe = 2 };

inline constexpr std::array<FailureMode, 3> kAllModes = {
    FailureMode::Spatial, FailureMode::Temporal, FailureMode::Crossframe};

constexpr std::size_t index_of(FailureMode mode) noexcept {
    return static_cast<std::size_t>(mode);
}

/// "spatial" | "temporal" | "crossframe"
std::string_view to_string(FailureMode mode) noexcept;
/// Inverse of to_string; throws Error(InvalidValue) on anything else.
FailureMode parse_failure_mode(std::string_view text);
/// Human-readable category name used in judge prompts, e.g. "Spatial Misalignment".
std::string_view display_name(FailureMode mode) noexcept;
std::optional<FailureMode> mode_from_display_name(std::string_view text);

/// Positive rational, serialized as "num/den".
struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 1;

    double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;
    /// Accepts "30", "29.97", or "30000/1001".
    static Rational parse(std::string_view text);

    friend bool operator==(const Rational&, const Rational&) = default;
};

struct VideoRef {
    std::string video_id;
    std::filesystem::path frame_manifest;
    Rational native_fps;
    double duration_s = 0.0;
    /// Ordered frame paths. Not serialized into record files; empty when a
    /// record was parsed without reloading its manifest.
    std::vector<std::string> frames;

    std::size_t frame_count() const noexcept { return frames.size(); }

    friend bool operator==(const VideoRef& a, const VideoRef& b) {
        return a.video_id == b.video_id && a.frame_manifest == b.frame_manifest &&
               a.native_fps == b.native_fps && a.duration_s == b.duration_s;
    }
};

/// Throws Error(InvalidValue) when fps/duration are non-positive or the
/// loaded frame count is not within one frame of fps * duration.
void validate_video(const VideoRef& video);

/// Reads a frame manifest. Format: an optional `#meta native_fps=<r> duration_s=<s>`
/// line, then one frame path per line, optionally followed by a timestamp in
/// seconds which must be strictly increasing. Relative frame paths resolve
/// against the manifest's directory. Missing metadata is read from a sidecar
/// `<manifest>.meta` file holding the same `native_fps=.. duration_s=..` line.
VideoRef load_video_manifest(const std::filesystem::path& manifest);

/// Loads every `*.manifest` file in `dir`, sorted by video_id.
std::vector<VideoRef> load_video_directory(const std::filesystem::path& dir);

struct QueryRecord {
    std::string video_id;
    FailureMode mode = FailureMode::Spatial;
    std::string query_text;
    std::string template_id;
    std::size_t query_index = 0;

    friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

enum class SamplingMode : std::uint8_t { Dense, Sparse };
std::string_view to_string(SamplingMode mode) noexcept;
SamplingMode parse_sampling_mode(std::string_view text);

struct SamplingSpec {
    SamplingMode mode = SamplingMode::Dense;
    /// Frame cap for dense sampling, frames per second for sparse sampling.
    double rate = 32.0;
    /// Coverage label: "even", "native", "uniform" (dense) or "fps" (sparse).
    std::string strategy = "even";
    std::vector<std::size_t> realized_frames;

    friend bool operator==(const SamplingSpec&, const SamplingSpec&) = default;
};

enum class ResponseRole : std::uint8_t { Preferred, Adversarial };
std::string_view to_string(ResponseRole role) noexcept;
ResponseRole parse_response_role(std::string_view text);

/// A generated response. Preferred responses always carry dense sampling and
/// adversarial ones sparse sampling; the constructor rejects anything else.
class ResponseRecord {
public:
    ResponseRecord(std::string text, SamplingSpec sampling, ResponseRole role,
                   std::string backend_id);

    const std::string& text() const noexcept { return text_; }
    const SamplingSpec& sampling() const noexcept { return sampling_; }
    ResponseRole role() const noexcept { return role_; }
    const std::string& backend_id() const noexcept { return backend_id_; }

    friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;

private:
    std::string text_;
    SamplingSpec sampling_;
    ResponseRole role_;
    std::string backend_id_;
};

struct CandidatePair {
    VideoRef video;
    QueryRecord query;
    ResponseRecord preferred;
    ResponseRecord adversarial;
    FailureMode mode = FailureMode::Spatial;
    /// Position of the adversary among those generated for its query.
    std::size_t adversary_index = 0;

    std::string pair_id() const;

    friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

/// Throws Error(ModeMismatch | IdenticalResponses | RoleSamplingMismatch | InvalidValue).
void validate_candidate(const CandidatePair& pair);

/// Deterministic content hash over (video_id, query_index, mode, adversary_index).
std::string make_pair_id(std::string_view video_id, std::size_t query_index, FailureMode mode,
                         std::size_t adversary_index);

/// A candidate that passed verification. Only retained records exist as this type.
struct PreferenceRecord {
    CandidatePair pair;
    std::string verifier_note;

    std::string pair_id() const { return pair.pair_id(); }
    FailureMode mode() const noexcept { return pair.mode; }

    friend bool operator==(const PreferenceRecord&, const PreferenceRecord&) = default;
};

struct PartitionedDataset {
    std::vector<PreferenceRecord> spatial;
    std::vector<PreferenceRecord> temporal;
    std::vector<PreferenceRecord> crossframe;

    std::vector<PreferenceRecord>& operator[](FailureMode mode);
    const std::vector<PreferenceRecord>& operator[](FailureMode mode) const;
    std::size_t size() const noexcept { return spatial.size() + temporal.size() + crossframe.size(); }

    friend bool operator==(const PartitionedDataset&, const PartitionedDataset&) = default;
};

/// Splits records by failure mode, preserving input order within each partition.
/// Throws Error(DuplicatePairId) naming the first repeated id.
PartitionedDataset partition(std::span<const PreferenceRecord> records);

/// Spatial, then temporal, then crossframe.
std::vector<PreferenceRecord> flatten(const PartitionedDataset& dataset);

// ---- JSON-lines serialization (keys in fixed order, "schema": "pasta/1") ----

std::string serialize(const CandidatePair& pair);
std::string serialize(const PreferenceRecord& record);

/// Parses and validates one candidate line.
CandidatePair parse_candidate(std::string_view line);

/// Parses one retained-dataset line and checks every record invariant. When
/// `partition_mode` is given the record must belong to that partition.
/// Error codes: MISSING_FIELD, MODE_MISMATCH, IDENTICAL_RESPONSES,
/// ROLE_SAMPLING_MISMATCH, SCHEMA_VERSION, INVALID_VALUE, PARSE_ERROR.
PreferenceRecord validate_record(std::string_view raw,
                                 std::optional<FailureMode> partition_mode = std::nullopt);

/// Non-empty lines of a text file.
std::vector<std::string> read_lines(const std::filesystem::path& path);
/// Writes each line followed by '\n'. Creates parent directories.
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
void write_text(const std::filesystem::path& path, std::string_view text);

std::vector<CandidatePair> read_candidates(const std::filesystem::path& path);
std::vector<PreferenceRecord> read_dataset(const std::filesystem::path& path);
void write_candidates(const std::filesystem::path& path, std::span<const CandidatePair> pairs);
void write_dataset(const std::filesystem::path& path, std::span<const PreferenceRecord> records);

}  // namespace pasta
