// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <json.hpp>

#include "pasta/core_model.hpp"
#include "pasta/error.hpp"
#include "pasta/hashing.hpp"

namespace pasta {

using ojson = nlohmann::ordered_json;

namespace {

ojson to_json(const VideoRef& v) {
    ojson j;
    j["video_id"] = v.video_id;
    j["frame_manifest"] = v.frame_manifest.generic_string();
    j["native_fps"] = v.native_fps.str();
    j["duration_s"] = v.duration_s;
    return j;
}

ojson to_json(const QueryRecord& q) {
    ojson j;
    j["video_id"] = q.video_id;
    j["mode"] = to_string(q.mode);
    j["query_text"] = q.query_text;
    j["template_id"] = q.template_id;
    j["query_index"] = q.query_index;
    return j;
}

ojson to_json(const SamplingSpec& s) {
    ojson j;
    j["mode"] = to_string(s.mode);
    j["rate"] = s.rate;
    j["strategy"] = s.strategy;
    j["realized_frames"] = s.realized_frames;
    return j;
}

ojson to_json(const ResponseRecord& r) {
    ojson j;
    j["text"] = r.text();
    j["role"] = to_string(r.role());
    j["backend_id"] = r.backend_id();
    j["sampling"] = to_json(r.sampling());
    return j;
}

ojson candidate_json(const CandidatePair& p) {
    ojson j;
    j["schema"] = kSchemaVersion;
    j["pair_id"] = p.pair_id();
    j["mode"] = to_string(p.mode);
    j["adversary_index"] = p.adversary_index;
    j["video"] = to_json(p.video);
    j["query"] = to_json(p.query);
    j["preferred"] = to_json(p.preferred);
    j["adversarial"] = to_json(p.adversarial);
    return j;
}

const ojson& field(const ojson& j, const char* key, const char* where) {
    if (!j.is_object()) {
        throw Error(ErrorCode::ParseError, std::string(where) + " is not an object");
    }
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        throw Error(ErrorCode::MissingField, std::string(where) + "." + key);
    }
    return *it;
}

template <typename T>
T get(const ojson& j, const char* key, const char* where) {
    const ojson& v = field(j, key, where);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::InvalidValue, std::string(where) + "." + key + " has wrong type");
    }
}

VideoRef video_from_json(const ojson& j) {
    VideoRef v;
    v.video_id = normalize_newlines(get<std::string>(j, "video_id", "video"));
    v.frame_manifest = get<std::string>(j, "frame_manifest", "video");
    v.native_fps = Rational::parse(get<std::string>(j, "native_fps", "video"));
    v.duration_s = get<double>(j, "duration_s", "video");
    validate_video(v);
    return v;
}

QueryRecord query_from_json(const ojson& j) {
    QueryRecord q;
    q.video_id = normalize_newlines(get<std::string>(j, "video_id", "query"));
    q.mode = parse_failure_mode(get<std::string>(j, "mode", "query"));
    q.query_text = normalize_newlines(get<std::string>(j, "query_text", "query"));
    q.template_id = get<std::string>(j, "template_id", "query");
    q.query_index = get<std::size_t>(j, "query_index", "query");
    return q;
}

SamplingSpec sampling_from_json(const ojson& j, const char* where) {
    SamplingSpec s;
    s.mode = parse_sampling_mode(get<std::string>(j, "mode", where));
    s.rate = get<double>(j, "rate", where);
    s.strategy = get<std::string>(j, "strategy", where);
    s.realized_frames = get<std::vector<std::size_t>>(j, "realized_frames", where);
    return s;
}

ResponseRecord response_from_json(const ojson& j, const char* where) {
    auto role = parse_response_role(get<std::string>(j, "role", where));
    return ResponseRecord(get<std::string>(j, "text", where),
                          sampling_from_json(field(j, "sampling", where), where), role,
                          get<std::string>(j, "backend_id", where));
}

CandidatePair candidate_from_json(const ojson& j) {
    if (get<std::string>(j, "schema", "record") != kSchemaVersion) {
        throw Error(ErrorCode::SchemaVersion,
                    "expected schema " + std::string(kSchemaVersion) + ", got " +
                        get<std::string>(j, "schema", "record"));
    }
    CandidatePair pair{
        video_from_json(field(j, "video", "record")),
        query_from_json(field(j, "query", "record")),
        response_from_json(field(j, "preferred", "record"), "preferred"),
        response_from_json(field(j, "adversarial", "record"), "adversarial"),
        parse_failure_mode(get<std::string>(j, "mode", "record")),
        get<std::size_t>(j, "adversary_index", "record"),
    };
    validate_candidate(pair);
    if (auto it = j.find("pair_id"); it != j.end() && it->is_string()) {
        if (it->get<std::string>() != pair.pair_id()) {
            throw Error(ErrorCode::InvalidValue, "pair_id " + it->get<std::string>() +
                                                     " does not match content hash " +
                                                     pair.pair_id());
        }
    }
    return pair;
}

ojson parse_object(std::string_view raw) {
    ojson j;
    try {
        j = ojson::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    if (!j.is_object()) {
        throw Error(ErrorCode::ParseError, "record is not a JSON object");
    }
    return j;
}

}  // namespace

std::string serialize(const CandidatePair& pair) {
    return candidate_json(pair).dump();
}

std::string serialize(const PreferenceRecord& record) {
    ojson j = candidate_json(record.pair);
    j["verdict"] = "retain";
    j["verifier_note"] = record.verifier_note;
    return j.dump();
}

CandidatePair parse_candidate(std::string_view line) {
    return candidate_from_json(parse_object(line));
}

PreferenceRecord validate_record(std::string_view raw, std::optional<FailureMode> partition_mode) {
    const ojson j = parse_object(raw);
    const auto verdict = get<std::string>(j, "verdict", "record");
    if (verdict != "retain") {
        throw Error(ErrorCode::InvalidValue, "verdict '" + verdict + "' cannot enter a dataset");
    }
    PreferenceRecord record{candidate_from_json(j), get<std::string>(j, "verifier_note", "record")};
    if (partition_mode && *partition_mode != record.mode()) {
        throw Error(ErrorCode::ModeMismatch,
                    "record " + record.pair_id() + " has mode " +
                        std::string(to_string(record.mode())) + " but sits in the " +
                        std::string(to_string(*partition_mode)) + " partition");
    }
    return record;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
    }
    return lines;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
    std::string text;
    for (const auto& l : lines) {
        text += l;
        text.push_back('\n');
    }
    write_text(path, text);
}

std::vector<CandidatePair> read_candidates(const std::filesystem::path& path) {
    std::vector<CandidatePair> out;
    for (const auto& line : read_lines(path)) {
        out.push_back(parse_candidate(line));
    }
    return out;
}

std::vector<PreferenceRecord> read_dataset(const std::filesystem::path& path) {
    std::vector<PreferenceRecord> out;
    for (const auto& line : read_lines(path)) {
        out.push_back(validate_record(line));
    }
    return out;
}

void write_candidates(const std::filesystem::path& path, std::span<const CandidatePair> pairs) {
    std::vector<std::string> lines;
    lines.reserve(pairs.size());
    for (const auto& p : pairs) lines.push_back(serialize(p));
    write_lines(path, lines);
}

void write_dataset(const std::filesystem::path& path, std::span<const PreferenceRecord> records) {
    std::vector<std::string> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(serialize(r));
    write_lines(path, lines);
}

}  // namespace pasta
