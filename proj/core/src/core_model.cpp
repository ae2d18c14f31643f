// SPDX-License-Identifier: Apache-2.0
#include "pasta/core_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pasta/error.hpp"
#include "pasta/hashing.hpp"

namespace pasta {

std::string_view to_string(FailureMode mode) noexcept {
    switch (mode) {
        case FailureMode::Spatial: return "spatial";
        case FailureMode::Temporal: return "temporal";
        case FailureMode::Crossframe: return "crossframe";
    }
    return "spatial";
}

FailureMode parse_failure_mode(std::string_view text) {
    for (FailureMode mode : kAllModes) {
        if (text == to_string(mode)) {
            return mode;
        }
    }
    throw Error(ErrorCode::InvalidValue, "unknown failure mode '" + std::string(text) + "'");
}

std::string_view display_name(FailureMode mode) noexcept {
    switch (mode) {
        case FailureMode::Spatial: return "Spatial Misalignment";
        case FailureMode::Temporal: return "Temporal Incoherence";
        case FailureMode::Crossframe: return "Cross-Frame Disconnection";
    }
    return "Spatial Misalignment";
}

std::optional<FailureMode> mode_from_display_name(std::string_view text) {
    auto lower = [](std::string_view s) {
        std::string out(s);
        std::transform(out.begin(), out.end(), out.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return out;
    };
    const std::string needle = lower(text);
    for (FailureMode mode : kAllModes) {
        if (needle.find(lower(display_name(mode))) != std::string::npos) {
            return mode;
        }
    }
    return std::nullopt;
}

std::string_view to_string(SamplingMode mode) noexcept {
    return mode == SamplingMode::Dense ? "dense" : "sparse";
}

SamplingMode parse_sampling_mode(std::string_view text) {
    if (text == "dense") return SamplingMode::Dense;
    if (text == "sparse") return SamplingMode::Sparse;
    throw Error(ErrorCode::InvalidValue, "unknown sampling mode '" + std::string(text) + "'");
}

std::string_view to_string(ResponseRole role) noexcept {
    return role == ResponseRole::Preferred ? "preferred" : "adversarial";
}

ResponseRole parse_response_role(std::string_view text) {
    if (text == "preferred") return ResponseRole::Preferred;
    if (text == "adversarial") return ResponseRole::Adversarial;
    throw Error(ErrorCode::InvalidValue, "unknown response role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- Rational

std::string Rational::str() const {
    return std::to_string(num) + "/" + std::to_string(den);
}

Rational Rational::parse(std::string_view text) {
    auto bad = [&] {
        return Error(ErrorCode::InvalidValue, "invalid rational '" + std::string(text) + "'");
    };
    auto parse_int = [&](std::string_view s) {
        std::int64_t v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) throw bad();
        return v;
    };
    Rational r;
    if (const auto slash = text.find('/'); slash != std::string_view::npos) {
        r.num = parse_int(text.substr(0, slash));
        r.den = parse_int(text.substr(slash + 1));
    } else if (const auto dot = text.find('.'); dot != std::string_view::npos) {
        const std::string_view frac = text.substr(dot + 1);
        if (frac.size() > 9) throw bad();
        std::string digits(text.substr(0, dot));
        digits.append(frac);
        r.num = parse_int(digits);
        r.den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) r.den *= 10;
    } else {
        r.num = parse_int(text);
        r.den = 1;
    }
    if (r.num <= 0 || r.den <= 0) throw bad();
    const std::int64_t g = std::gcd(r.num, r.den);
    r.num /= g;
    r.den /= g;
    return r;
}

// ---------------------------------------------------------------- videos

void validate_video(const VideoRef& video) {
    if (video.video_id.empty()) {
        throw Error(ErrorCode::InvalidValue, "video_id is empty");
    }
    if (video.native_fps.num <= 0 || video.native_fps.den <= 0) {
        throw Error(ErrorCode::InvalidValue, video.video_id + ": native_fps must be positive");
    }
    if (!(video.duration_s > 0.0) || !std::isfinite(video.duration_s)) {
        throw Error(ErrorCode::InvalidValue, video.video_id + ": duration_s must be positive");
    }
    if (!video.frames.empty()) {
        const double expected = video.native_fps.value() * video.duration_s;
        if (std::abs(static_cast<double>(video.frames.size()) - expected) > 1.0 + 1e-9) {
            std::ostringstream msg;
            msg << video.video_id << ": manifest has " << video.frames.size()
                << " frames but native_fps x duration_s = " << expected;
            throw Error(ErrorCode::InvalidValue, msg.str());
        }
    }
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

// Parses "native_fps=30 duration_s=10" into the video.
void apply_meta(std::string_view line, VideoRef& video, bool& have_fps, bool& have_duration) {
    std::istringstream in{std::string(line)};
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (key == "native_fps") {
            video.native_fps = Rational::parse(value);
            have_fps = true;
        } else if (key == "duration_s") {
            try {
                video.duration_s = std::stod(value);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidValue, "invalid duration_s '" + value + "'");
            }
            have_duration = true;
        }
    }
}

}  // namespace

VideoRef load_video_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read frame manifest " + manifest.string());
    }
    VideoRef video;
    video.video_id = manifest.stem().string();
    video.frame_manifest = manifest;
    bool have_fps = false;
    bool have_duration = false;
    std::optional<double> last_ts;
    const auto base = manifest.parent_path();

    std::string raw;
    while (std::getline(in, raw)) {
        const std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line.starts_with("#meta")) {
            apply_meta(line.substr(5), video, have_fps, have_duration);
            continue;
        }
        if (line.front() == '#') continue;

        std::string_view path_part = line;
        if (const auto ws = line.find_first_of(" \t"); ws != std::string_view::npos) {
            path_part = line.substr(0, ws);
            const std::string ts_text(trim(line.substr(ws)));
            double ts = 0.0;
            try {
                ts = std::stod(ts_text);
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidValue,
                            manifest.string() + ": bad timestamp '" + ts_text + "'");
            }
            if (last_ts && !(ts > *last_ts)) {
                throw Error(ErrorCode::InvalidValue,
                            manifest.string() + ": timestamps must be strictly increasing");
            }
            last_ts = ts;
        }
        std::filesystem::path frame{std::string(path_part)};
        if (frame.is_relative()) frame = base / frame;
        video.frames.push_back(frame.lexically_normal().string());
    }

    if (!(have_fps && have_duration)) {
        auto sidecar = manifest;
        sidecar += ".meta";
        std::ifstream meta(sidecar);
        std::string meta_line;
        while (meta && std::getline(meta, meta_line)) {
            apply_meta(meta_line, video, have_fps, have_duration);
        }
    }
    if (!(have_fps && have_duration)) {
        throw Error(ErrorCode::MissingField,
                    manifest.string() + ": native_fps and duration_s metadata required");
    }
    if (video.frames.empty()) {
        throw Error(ErrorCode::EmptyManifest, manifest.string() + " lists no frames");
    }
    validate_video(video);
    return video;
}

std::vector<VideoRef> load_video_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorCode::Io, "video directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> manifests;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".manifest") {
            manifests.push_back(entry.path());
        }
    }
    std::sort(manifests.begin(), manifests.end());
    std::vector<VideoRef> videos;
    videos.reserve(manifests.size());
    for (const auto& m : manifests) {
        videos.push_back(load_video_manifest(m));
    }
    std::sort(videos.begin(), videos.end(),
              [](const VideoRef& a, const VideoRef& b) { return a.video_id < b.video_id; });
    return videos;
}

// ---------------------------------------------------------------- records

ResponseRecord::ResponseRecord(std::string text, SamplingSpec sampling, ResponseRole role,
                               std::string backend_id)
    : text_(normalize_newlines(text)),
      sampling_(std::move(sampling)),
      role_(role),
      backend_id_(std::move(backend_id)) {
    const SamplingMode required =
        role_ == ResponseRole::Preferred ? SamplingMode::Dense : SamplingMode::Sparse;
    if (sampling_.mode != required) {
        throw Error(ErrorCode::RoleSamplingMismatch,
                    std::string(to_string(role_)) + " response requires " +
                        std::string(to_string(required)) + " sampling");
    }
}

std::string make_pair_id(std::string_view video_id, std::size_t query_index, FailureMode mode,
                         std::size_t adversary_index) {
    std::string key = normalize_newlines(video_id);
    key.push_back('\x1f');
    key += std::to_string(query_index);
    key.push_back('\x1f');
    key += to_string(mode);
    key.push_back('\x1f');
    key += std::to_string(adversary_index);
    return sha256_hex(key).substr(0, 16);
}

std::string CandidatePair::pair_id() const {
    return make_pair_id(video.video_id, query.query_index, mode, adversary_index);
}

void validate_candidate(const CandidatePair& pair) {
    if (pair.query.query_text.empty()) {
        throw Error(ErrorCode::InvalidValue, "query_text is empty");
    }
    if (pair.query.video_id != pair.video.video_id) {
        throw Error(ErrorCode::InvalidValue, "query.video_id '" + pair.query.video_id +
                                                 "' differs from video '" + pair.video.video_id +
                                                 "'");
    }
    if (pair.mode != pair.query.mode) {
        throw Error(ErrorCode::ModeMismatch, "pair mode " + std::string(to_string(pair.mode)) +
                                                 " differs from query mode " +
                                                 std::string(to_string(pair.query.mode)));
    }
    if (pair.preferred.role() != ResponseRole::Preferred ||
        pair.adversarial.role() != ResponseRole::Adversarial) {
        throw Error(ErrorCode::RoleSamplingMismatch, "preferred/adversarial roles swapped");
    }
    if (pair.preferred.text() == pair.adversarial.text()) {
        throw Error(ErrorCode::IdenticalResponses,
                    "preferred and adversarial text are identical for pair " + pair.pair_id());
    }
}

std::vector<PreferenceRecord>& PartitionedDataset::operator[](FailureMode mode) {
    switch (mode) {
        case FailureMode::Spatial: return spatial;
        case FailureMode::Temporal: return temporal;
        case FailureMode::Crossframe: return crossframe;
    }
    return spatial;
}

const std::vector<PreferenceRecord>& PartitionedDataset::operator[](FailureMode mode) const {
    return const_cast<PartitionedDataset&>(*this)[mode];
}

PartitionedDataset partition(std::span<const PreferenceRecord> records) {
    PartitionedDataset out;
    std::unordered_set<std::string> seen;
    seen.reserve(records.size());
    for (const auto& record : records) {
        std::string id = record.pair_id();
        if (!seen.insert(id).second) {
            throw Error(ErrorCode::DuplicatePairId, "duplicate pair_id " + id);
        }
        out[record.mode()].push_back(record);
    }
    return out;
}

std::vector<PreferenceRecord> flatten(const PartitionedDataset& dataset) {
    std::vector<PreferenceRecord> out;
    out.reserve(dataset.size());
    for (FailureMode mode : kAllModes) {
        const auto& part = dataset[mode];
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

}  // namespace pasta
