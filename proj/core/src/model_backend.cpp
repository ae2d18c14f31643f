// SPDX-License-Identifier: Apache-2.0
#include "pasta/model_backend.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <thread>

#include "pasta/error.hpp"
#include "pasta/hashing.hpp"

namespace pasta {

std::string prompt_key(const ChatRequest& request) {
    std::string material = request.system_text;
    material.push_back('\x1e');
    material += request.user_text;
    material.push_back('\x1e');
    material += std::to_string(request.frames.size());
    return sha256_hex(material);
}

std::string_view to_string(FailureKind kind) noexcept {
    switch (kind) {
        case FailureKind::Timeout: return "TIMEOUT";
        case FailureKind::HttpStatus: return "HTTP_STATUS";
        case FailureKind::Transport: return "TRANSPORT";
        case FailureKind::MalformedPayload: return "MALFORMED_PAYLOAD";
        case FailureKind::FrameLimit: return "FRAME_LIMIT";
        case FailureKind::ReplayMiss: return "REPLAY_MISS";
    }
    return "TRANSPORT";
}

// ---------------------------------------------------------------- config

void BackendConfig::validate() const {
    if (kind != "http" && kind != "mock") {
        throw Error(ErrorCode::InvalidValue, "backend kind must be 'http' or 'mock', got '" +
                                                 kind + "'");
    }
    if (max_in_flight < 1) {
        throw Error(ErrorCode::InvalidValue, "max_in_flight must be >= 1");
    }
    if (max_retries < 0) {
        throw Error(ErrorCode::InvalidValue, "max_retries must be >= 0");
    }
    if (max_frames < 1) {
        throw Error(ErrorCode::InvalidValue, "max_frames must be >= 1");
    }
    if (!(timeout_s > 0.0)) {
        throw Error(ErrorCode::InvalidValue, "timeout_s must be positive");
    }
    if (backoff_initial_s < 0.0 || backoff_max_s < 0.0) {
        throw Error(ErrorCode::InvalidValue, "backoff must be non-negative");
    }
    if (kind == "http" && endpoint_url.empty()) {
        throw Error(ErrorCode::MissingField, "http backend requires endpoint_url");
    }
}

BackendConfig BackendConfig::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, std::string("backend config: ") + e.what());
    }
    BackendConfig c;
    try {
        c.kind = j.value("kind", c.kind);
        c.endpoint_url = j.value("endpoint_url", c.endpoint_url);
        c.model_name = j.value("model_name", c.model_name);
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        c.max_frames = j.value("max_frames", c.max_frames);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.backoff_initial_s = j.value("backoff_initial_s", c.backoff_initial_s);
        c.backoff_max_s = j.value("backoff_max_s", c.backoff_max_s);
        c.seed = j.value("seed", c.seed);
        c.replay_path = j.value("replay_path", std::string{});
        c.replay_strict = j.value("replay_strict", c.replay_strict);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidValue, std::string("backend config: ") + e.what());
    }
    if (c.kind == "mock" && !j.contains("backoff_initial_s")) {
        c.backoff_initial_s = 0.0;
    }
    c.validate();
    return c;
}

BackendConfig BackendConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read backend config " + path.string());
    }
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return from_json(text);
}

BackendConfig BackendConfig::mock(std::uint64_t seed) {
    BackendConfig c;
    c.kind = "mock";
    c.model_name = "mock";
    c.seed = seed;
    c.backoff_initial_s = 0.0;
    c.backoff_max_s = 0.0;
    return c;
}

// ---------------------------------------------------------------- base client

namespace {

const BackendConfig& validated(const BackendConfig& c) {
    c.validate();
    return c;
}

}  // namespace

ChatBackend::ChatBackend(BackendConfig config)
    : config_(std::move(config)), in_flight_(validated(config_).max_in_flight) {}

Completion ChatBackend::complete(const ChatRequest& request) {
    Completion result;
    if (request.frames.size() > config_.max_frames) {
        result.failure = BackendFailure{
            FailureKind::FrameLimit, false, 0,
            "request carries " + std::to_string(request.frames.size()) +
                " frames; limit is " + std::to_string(config_.max_frames)};
        return result;
    }

    const int max_attempts = 1 + config_.max_retries;
    double backoff = config_.backoff_initial_s;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        Attempt a;
        {
            in_flight_.acquire();
            try {
                a = attempt_once(request);
            } catch (...) {
                in_flight_.release();
                throw;
            }
            in_flight_.release();
        }
        result.attempts = attempt;
        if (a.text && !a.text->empty()) {
            result.text = std::move(a.text);
            result.failure.reset();
            if (record_) {
                nlohmann::ordered_json line;
                line["key"] = prompt_key(request);
                line["frames"] = request.frames.size();
                line["request_tag"] = request.request_tag;
                line["response"] = *result.text;
                std::lock_guard lock(record_mutex_);
                *record_ << line.dump() << '\n';
                record_->flush();
            }
            return result;
        }
        result.failure = a.failure.value_or(
            BackendFailure{FailureKind::MalformedPayload, false, 0, "empty response text"});
        if (!result.failure->retryable || attempt == max_attempts) {
            break;
        }
        if (backoff > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        }
        backoff = std::min(backoff * 2.0, config_.backoff_max_s);
    }
    return result;
}

std::vector<Completion> ChatBackend::complete_batch(std::span<const ChatRequest> requests) {
    std::vector<Completion> results(requests.size());
    if (requests.empty()) {
        return results;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(config_.max_in_flight), requests.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
            results[i] = complete(requests[i]);
        }
    };
    if (workers == 1) {
        work();
        return results;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(work);
    }
    pool.clear();  // joins
    return results;
}

void ChatBackend::record_to(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto out = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*out) {
        throw Error(ErrorCode::Io, "cannot open replay file " + path.string());
    }
    std::lock_guard lock(record_mutex_);
    record_ = std::move(out);
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == "mock") {
        auto mock = std::make_unique<MockBackend>(config);
        if (!config.replay_path.empty()) {
            mock->load_replay(config.replay_path);
        }
        return mock;
    }
    return std::make_unique<HttpBackend>(config);
}

}  // namespace pasta
