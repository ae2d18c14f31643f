// SPDX-License-Identifier: Apache-2.0
//
// Chat-with-frames inference clients. `ChatBackend` owns the retry loop,
// in-flight bound and replay recording; subclasses implement one attempt.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pasta {

inline constexpr std::size_t kDefaultMaxFrames = 32;
inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kVerificationTemperature = 0.0;

struct ChatRequest {
    std::string system_text;
    std::string user_text;
    /// Base64-encoded JPEG payloads, in temporal order.
    std::vector<std::string> frames;
    double temperature = kGenerationTemperature;
    int max_tokens = 1024;
    /// Idempotency tag; sent as a header so a server can deduplicate retries.
    std::string request_tag;
};

/// Cache/replay key: SHA-256 over (system text, user text, frame count).
std::string prompt_key(const ChatRequest& request);

struct BackendConfig {
    /// "http" or "mock".
    std::string kind = "http";
    /// Full URL including path, e.g. http://127.0.0.1:8000/v1/chat/completions
    std::string endpoint_url;
    std::string model_name;
    double timeout_s = 120.0;
    int max_retries = 3;
    int max_in_flight = 4;
    std::size_t max_frames = kDefaultMaxFrames;
    /// Environment variable holding the bearer token; unset or empty means no auth header.
    std::string api_key_env = "PASTA_API_KEY";
    double backoff_initial_s = 0.5;
    double backoff_max_s = 8.0;
    /// Mock only.
    std::uint64_t seed = 0;
    /// Mock only: JSON-lines replay corpus to answer from.
    std::filesystem::path replay_path;
    /// Mock only: fail on prompts missing from the replay corpus.
    bool replay_strict = false;

    /// Throws Error(InvalidValue) on max_in_flight < 1 and similar.
    void validate() const;
    static BackendConfig from_json(std::string_view text);
    static BackendConfig from_file(const std::filesystem::path& path);
    /// Mock backend with zero backoff.
    static BackendConfig mock(std::uint64_t seed = 0);
};

enum class FailureKind {
    Timeout,
    HttpStatus,
    Transport,
    MalformedPayload,
    FrameLimit,
    ReplayMiss,
};
std::string_view to_string(FailureKind kind) noexcept;

struct BackendFailure {
    FailureKind kind = FailureKind::Transport;
    bool retryable = false;
    int http_status = 0;
    std::string message;
};

struct Completion {
    std::optional<std::string> text;
    std::optional<BackendFailure> failure;
    int attempts = 0;

    bool ok() const noexcept { return text.has_value(); }
};

class ChatBackend {
public:
    explicit ChatBackend(BackendConfig config);
    virtual ~ChatBackend() = default;

    ChatBackend(const ChatBackend&) = delete;
    ChatBackend& operator=(const ChatBackend&) = delete;

    /// Identifier recorded on generated responses, e.g. "http:model-name".
    virtual std::string id() const = 0;

    /// Blocking. Retries retryable failures up to max_retries extra attempts
    /// with exponential backoff; never retries after a success.
    Completion complete(const ChatRequest& request);

    /// Positionally aligned results; at most max_in_flight requests outstanding.
    /// A failing item never aborts the batch.
    std::vector<Completion> complete_batch(std::span<const ChatRequest> requests);

    const BackendConfig& config() const noexcept { return config_; }

    /// Appends every successful (prompt key, response) to `path` as JSON lines.
    void record_to(const std::filesystem::path& path);

protected:
    struct Attempt {
        std::optional<std::string> text;
        std::optional<BackendFailure> failure;
    };
    virtual Attempt attempt_once(const ChatRequest& request) = 0;

private:
    BackendConfig config_;
    std::counting_semaphore<> in_flight_;
    std::mutex record_mutex_;
    std::unique_ptr<std::ofstream> record_;
};

/// Chat-completions HTTP client (message list with base64 data-URL image parts).
class HttpBackend final : public ChatBackend {
public:
    explicit HttpBackend(BackendConfig config);
    std::string id() const override;

protected:
    Attempt attempt_once(const ChatRequest& request) override;

private:
    std::string base_;  // scheme://host:port
    std::string path_;
};

/// Builds the JSON body sent by HttpBackend.
std::string build_chat_body(const BackendConfig& config, const ChatRequest& request);
/// Extracts choices[0].message.content; nullopt when absent or empty.
std::optional<std::string> parse_chat_response(std::string_view body);

/// Deterministic offline backend. Output is a pure function of
/// (prompt key, seed): canned corpus entries win, otherwise a synthetic reply
/// shaped to the prompt kind is produced.
class MockBackend final : public ChatBackend {
public:
    /// Optional override consulted before the corpus; return nullopt to fall through.
    using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

    explicit MockBackend(BackendConfig config = BackendConfig::mock());

    std::string id() const override;

    void add_canned(std::string key, std::string response);
    /// Loads a replay file written by ChatBackend::record_to.
    void load_replay(const std::filesystem::path& path);
    /// Every request whose prompt key is poisoned fails with a retryable HTTP 503.
    void poison(std::string key);
    void set_responder(Responder responder);

    /// The synthetic reply used when neither responder nor corpus answer.
    std::string synthesize(const ChatRequest& request) const;

protected:
    Attempt attempt_once(const ChatRequest& request) override;

private:
    std::map<std::string, std::string> canned_;
    std::set<std::string> poisoned_;
    Responder responder_;
};

/// Constructs the backend named by config.kind.
std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config);

}  // namespace pasta
