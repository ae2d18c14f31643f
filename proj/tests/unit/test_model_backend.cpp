// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "pasta/error.hpp"
#include "pasta/hashing.hpp"
#include "pasta/model_backend.hpp"
#include "pasta/prompt_protocol.hpp"
#include "test_support.hpp"

using namespace pasta;
using namespace std::chrono_literals;
using pasta::testkit::TempDir;

namespace {

std::string ok_body(const std::string& text) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

/// Local chat-completions server whose replies are scripted per request.
class FakeServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit FakeServer(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            handler_(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    BackendConfig config() const {
        BackendConfig c;
        c.kind = "http";
        c.endpoint_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        c.model_name = "test-model";
        c.timeout_s = 5.0;
        c.max_retries = 3;
        c.max_in_flight = 4;
        c.backoff_initial_s = 0.001;
        c.backoff_max_s = 0.004;
        return c;
    }
    int hits() const { return hits_.load(); }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
};

/// Replies with the next status from a script; 200 carries a completion.
FakeServer::Handler scripted(std::vector<int> statuses) {
    auto queue = std::make_shared<std::deque<int>>(statuses.begin(), statuses.end());
    auto mu = std::make_shared<std::mutex>();
    return [queue, mu](const httplib::Request&, httplib::Response& res) {
        int status = 200;
        {
            std::lock_guard lock(*mu);
            if (!queue->empty()) {
                status = queue->front();
                queue->pop_front();
            }
        }
        res.status = status;
        res.set_content(status == 200 ? ok_body("hello") : "{\"error\":\"scripted\"}", "application/json");
    };
}

ChatRequest request(std::string user = "Describe the video.") {
    ChatRequest r;
    r.system_text = "sys";
    r.user_text = std::move(user);
    r.request_tag = "t";
    return r;
}

}  // namespace

TEST(HttpBackend, RetriesTransientStatusesThenSucceeds) {
    FakeServer server(scripted({500, 500, 200}));
    HttpBackend backend(server.config());
    const Completion c = backend.complete(request());
    ASSERT_TRUE(c.ok());
    EXPECT_EQ(*c.text, "hello");
    EXPECT_EQ(c.attempts, 3);
    EXPECT_EQ(server.hits(), 3);
}

TEST(HttpBackend, RetryableStatusesAreRetried) {
    for (int status : {408, 429, 502, 503}) {
        FakeServer server(scripted({status, 200}));
        HttpBackend backend(server.config());
        const Completion c = backend.complete(request());
        EXPECT_TRUE(c.ok()) << status;
        EXPECT_EQ(c.attempts, 2) << status;
    }
}

TEST(HttpBackend, ClientErrorIsTerminal) {
    FakeServer server(scripted({404, 200}));
    HttpBackend backend(server.config());
    const Completion c = backend.complete(request());
    ASSERT_FALSE(c.ok());
    EXPECT_EQ(c.attempts, 1);
    EXPECT_EQ(c.failure->kind, FailureKind::HttpStatus);
    EXPECT_EQ(c.failure->http_status, 404);
    EXPECT_FALSE(c.failure->retryable);
}

TEST(HttpBackend, GivesUpAfterMaxRetries) {
    FakeServer server(scripted({503, 503, 503, 503, 503, 503}));
    auto cfg = server.config();
    cfg.max_retries = 2;
    HttpBackend backend(cfg);
    const Completion c = backend.complete(request());
    EXPECT_FALSE(c.ok());
    EXPECT_EQ(c.attempts, 3);
    EXPECT_EQ(server.hits(), 3);
}

TEST(HttpBackend, MalformedPayloadIsTerminal) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"choices\": []}", "application/json");
    });
    HttpBackend backend(server.config());
    const Completion c = backend.complete(request());
    EXPECT_FALSE(c.ok());
    EXPECT_EQ(c.failure->kind, FailureKind::MalformedPayload);
    EXPECT_EQ(c.attempts, 1);
}

TEST(HttpBackend, SendsImagesAuthAndIdempotencyKey) {
    std::mutex mu;
    nlohmann::json seen;
    std::string auth;
    std::string idem;
    FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(mu);
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        idem = req.get_header_value("Idempotency-Key");
        res.set_content(ok_body("fine"), "application/json");
    });
    auto cfg = server.config();
    cfg.api_key_env = "PASTA_TEST_BACKEND_KEY";
    ::setenv("PASTA_TEST_BACKEND_KEY", "sekrit", 1);
    HttpBackend backend(cfg);
    auto r = request();
    r.frames = {"QUJD", "REVG"};
    r.temperature = 0.0;
    ASSERT_TRUE(backend.complete(r).ok());
    ::unsetenv("PASTA_TEST_BACKEND_KEY");

    std::lock_guard lock(mu);
    EXPECT_EQ(auth, "Bearer sekrit");
    EXPECT_EQ(idem, "t");
    EXPECT_EQ(seen["model"], "test-model");
    EXPECT_EQ(seen["messages"][0]["role"], "system");
    const auto& parts = seen["messages"][1]["content"];
    ASSERT_EQ(parts.size(), 3u);
    EXPECT_EQ(parts[0]["type"], "text");
    EXPECT_EQ(parts[1]["image_url"]["url"], "data:image/jpeg;base64,QUJD");
    EXPECT_EQ(seen["temperature"], 0.0);
}

TEST(HttpBackend, NoAuthHeaderWithoutKey) {
    std::atomic<bool> had_auth{true};
    FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
        had_auth = req.has_header("Authorization");
        res.set_content(ok_body("x"), "application/json");
    });
    auto cfg = server.config();
    cfg.api_key_env = "PASTA_TEST_UNSET_KEY";
    ::unsetenv("PASTA_TEST_UNSET_KEY");
    HttpBackend backend(cfg);
    ASSERT_TRUE(backend.complete(request()).ok());
    EXPECT_FALSE(had_auth.load());
}

TEST(HttpBackend, TimeoutIsRetryableFailure) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(800ms);
        res.set_content(ok_body("late"), "application/json");
    });
    auto cfg = server.config();
    cfg.timeout_s = 0.2;
    cfg.max_retries = 0;
    HttpBackend backend(cfg);
    const Completion c = backend.complete(request());
    ASSERT_FALSE(c.ok());
    EXPECT_EQ(c.failure->kind, FailureKind::Timeout);
    EXPECT_TRUE(c.failure->retryable);
}

TEST(HttpBackend, ConnectionRefusedIsTransport) {
    BackendConfig cfg;
    cfg.kind = "http";
    cfg.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
    cfg.model_name = "m";
    cfg.max_retries = 1;
    cfg.backoff_initial_s = 0.0;
    HttpBackend backend(cfg);
    const Completion c = backend.complete(request());
    ASSERT_FALSE(c.ok());
    EXPECT_TRUE(c.failure->kind == FailureKind::Transport || c.failure->kind == FailureKind::Timeout);
    EXPECT_EQ(c.attempts, 2);
}

TEST(HttpBackend, BatchRespectsInFlightBoundAndOrder) {
    std::atomic<int> current{0};
    std::atomic<int> peak{0};
    FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
        const int now = ++current;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(40ms);
        --current;
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(ok_body("echo:" + body["messages"][1]["content"][0]["text"].get<std::string>()),
                        "application/json");
    });
    auto cfg = server.config();
    cfg.max_in_flight = 3;
    HttpBackend backend(cfg);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 12; ++i) reqs.push_back(request("q" + std::to_string(i)));
    const auto out = backend.complete_batch(reqs);
    ASSERT_EQ(out.size(), 12u);
    for (int i = 0; i < 12; ++i) {
        ASSERT_TRUE(out[i].ok());
        EXPECT_EQ(*out[i].text, "echo:q" + std::to_string(i));
    }
    EXPECT_LE(peak.load(), 3);
    EXPECT_GE(peak.load(), 2);
}

TEST(HttpBackend, BatchItemFailureDoesNotAbortOthers) {
    FakeServer server([](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const auto text = body["messages"][1]["content"][0]["text"].get<std::string>();
        if (text == "bad") {
            res.status = 400;
            res.set_content("{}", "application/json");
        } else {
            res.set_content(ok_body("ok"), "application/json");
        }
    });
    HttpBackend backend(server.config());
    std::vector<ChatRequest> reqs{request("a"), request("bad"), request("c")};
    const auto out = backend.complete_batch(reqs);
    EXPECT_TRUE(out[0].ok());
    EXPECT_FALSE(out[1].ok());
    EXPECT_TRUE(out[2].ok());
}

TEST(Backend, FrameLimitFailsWithoutCallingServer) {
    FakeServer server(scripted({}));
    auto cfg = server.config();
    cfg.max_frames = 2;
    HttpBackend backend(cfg);
    auto r = request();
    r.frames = {"a", "b", "c"};
    const Completion c = backend.complete(r);
    ASSERT_FALSE(c.ok());
    EXPECT_EQ(c.failure->kind, FailureKind::FrameLimit);
    EXPECT_EQ(server.hits(), 0);
}

TEST(PromptKey, DependsOnTextAndFrameCountOnly) {
    auto a = request("x");
    auto b = request("x");
    b.temperature = 0.1;
    b.request_tag = "other";
    EXPECT_EQ(prompt_key(a), prompt_key(b));
    b.frames = {"f"};
    EXPECT_NE(prompt_key(a), prompt_key(b));
    // Oracle: SHA-256 over record-separated fields.
    EXPECT_EQ(prompt_key(a), sha256_hex(std::string("sys\x1e") + "x\x1e" + "0"));
}

TEST(BackendConfig, ParsesJsonAndValidates) {
    const auto c = BackendConfig::from_json(
        R"({"kind":"http","endpoint_url":"http://h:1/v1/chat/completions","model_name":"m","max_in_flight":2})");
    EXPECT_EQ(c.kind, "http");
    EXPECT_EQ(c.max_in_flight, 2);
    EXPECT_THROW(BackendConfig::from_json(R"({"kind":"http","max_in_flight":0,"model_name":"m","endpoint_url":"http://h"})"),
                 Error);
    EXPECT_THROW(BackendConfig::from_json("not json"), Error);
    const auto m = BackendConfig::from_json(R"({"kind":"mock","seed":5})");
    EXPECT_EQ(m.seed, 5u);
    EXPECT_EQ(m.backoff_initial_s, 0.0);
}

TEST(MockBackend, OutputIsPureFunctionOfKeyAndSeed) {
    MockBackend a(BackendConfig::mock(1));
    MockBackend b(BackendConfig::mock(1));
    MockBackend c(BackendConfig::mock(2));
    auto r = request(std::string(protocol::kQueryLine) + "Where is the cup?\n" +
                     std::string(protocol::kPreferredInstruction));
    EXPECT_EQ(*a.complete(r).text, *b.complete(r).text);
    EXPECT_NE(*a.complete(r).text, *c.complete(r).text);
    EXPECT_EQ(*a.complete(r).text, a.synthesize(r));
}

TEST(MockBackend, QueryListHasRequestedLength) {
    MockBackend m(BackendConfig::mock(0));
    auto r = request("temporal reasoning\n" + std::string(protocol::kQueryListInstruction) + "4 items.");
    const auto text = *m.complete(r).text;
    EXPECT_NE(text.find("4. "), std::string::npos);
    EXPECT_EQ(text.find("5. "), std::string::npos);
}

TEST(MockBackend, PoisonedPromptFailsAfterRetries) {
    auto cfg = BackendConfig::mock(0);
    cfg.max_retries = 2;
    MockBackend m(cfg);
    const auto r = request("poison me");
    m.poison(prompt_key(r));
    const Completion c = m.complete(r);
    ASSERT_FALSE(c.ok());
    EXPECT_EQ(c.attempts, 3);
    EXPECT_EQ(c.failure->http_status, 503);
    EXPECT_TRUE(m.complete(request("fine")).ok());
}

TEST(MockBackend, RecordThenStrictReplay) {
    TempDir dir;
    const auto corpus = dir / "corpus.jsonl";
    std::string first;
    {
        MockBackend m(BackendConfig::mock(3));
        m.record_to(corpus);
        first = *m.complete(request("abc")).text;
    }
    auto cfg = BackendConfig::mock(99);
    cfg.replay_path = corpus;
    cfg.replay_strict = true;
    auto replay = make_backend(cfg);
    EXPECT_EQ(*replay->complete(request("abc")).text, first);
    const Completion miss = replay->complete(request("never recorded"));
    ASSERT_FALSE(miss.ok());
    EXPECT_EQ(miss.failure->kind, FailureKind::ReplayMiss);
    EXPECT_EQ(miss.attempts, 1);
}

TEST(MockBackend, ResponderOverridesSynthesis) {
    MockBackend m;
    m.set_responder([](const ChatRequest& r) -> std::optional<std::string> {
        if (r.user_text == "special") return "scripted";
        return std::nullopt;
    });
    EXPECT_EQ(*m.complete(request("special")).text, "scripted");
    EXPECT_NE(*m.complete(request("ordinary")).text, "scripted");
}

TEST(ChatBody, ParsesOnlyWellFormedResponses) {
    EXPECT_EQ(parse_chat_response(ok_body("x")), "x");
    EXPECT_FALSE(parse_chat_response("{}").has_value());
    EXPECT_FALSE(parse_chat_response(ok_body("")).has_value());
    EXPECT_FALSE(parse_chat_response("<html>").has_value());
}
