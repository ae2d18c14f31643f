// SPDX-License-Identifier: Apache-2.0
#include <httplib.h>

#include <cstdlib>
#include <json.hpp>

#include "pasta/error.hpp"
#include "pasta/model_backend.hpp"

namespace pasta {

namespace {

// Splits "http://host:port/path" into ("http://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorCode::InvalidValue, "endpoint_url lacks a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/v1/chat/completions"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) {
    return status == 408 || status == 429 || status >= 500;
}

}  // namespace

std::string build_chat_body(const BackendConfig& config, const ChatRequest& request) {
    nlohmann::ordered_json body;
    body["model"] = config.model_name;
    nlohmann::ordered_json messages = nlohmann::ordered_json::array();
    if (!request.system_text.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.system_text}});
    }
    nlohmann::ordered_json parts = nlohmann::ordered_json::array();
    parts.push_back({{"type", "text"}, {"text", request.user_text}});
    for (const auto& frame : request.frames) {
        parts.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:image/jpeg;base64," + frame}}}});
    }
    messages.push_back({{"role", "user"}, {"content", std::move(parts)}});
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_tokens;
    body["stream"] = false;
    return body.dump();
}

std::optional<std::string> parse_chat_response(std::string_view body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) {
            return std::nullopt;
        }
        auto text = content.get<std::string>();
        if (text.empty()) {
            return std::nullopt;
        }
        return text;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

HttpBackend::HttpBackend(BackendConfig config) : ChatBackend(std::move(config)) {
    std::tie(base_, path_) = split_url(this->config().endpoint_url);
}

std::string HttpBackend::id() const {
    return "http:" + config().model_name;
}

ChatBackend::Attempt HttpBackend::attempt_once(const ChatRequest& request) {
    const BackendConfig& cfg = config();
    httplib::Client client(base_);
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!request.request_tag.empty()) {
        headers.emplace("Idempotency-Key", request.request_tag);
    }
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    Attempt attempt;
    auto res = client.Post(path_, headers, build_chat_body(cfg, request), "application/json");
    if (!res) {
        const auto err = res.error();
        const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        attempt.failure = BackendFailure{timed_out ? FailureKind::Timeout : FailureKind::Transport,
                                         true, 0, httplib::to_string(err)};
        return attempt;
    }
    if (res->status < 200 || res->status >= 300) {
        attempt.failure = BackendFailure{FailureKind::HttpStatus, retryable_status(res->status),
                                         res->status,
                                         "HTTP " + std::to_string(res->status) + ": " +
                                             res->body.substr(0, 200)};
        return attempt;
    }
    attempt.text = parse_chat_response(res->body);
    if (!attempt.text) {
        attempt.failure = BackendFailure{FailureKind::MalformedPayload, false, res->status,
                                         "response lacks choices[0].message.content"};
    }
    return attempt;
}

}  // namespace pasta
