#include <emoforge/http_backend.hpp>
#include <emoforge/instruction_parser.hpp>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace emoforge {
namespace {

using testing::make_attribute;

GenerationRequest request_for(const std::string& id, const std::string& emotion,
                              InstructionKind kind = InstructionKind::conversation) {
  return build_request(kind, {id, "a photo of " + id}, make_attribute(id, emotion), {});
}

BackendConfig fast_config() {
  BackendConfig c;
  c.base_backoff = std::chrono::milliseconds(1);
  return c;
}

Sleeper recording_sleeper(std::vector<std::chrono::milliseconds>& sleeps) {
  return [&sleeps](std::chrono::milliseconds d) { sleeps.push_back(d); };
}

TEST(BackendConfig, Validation) {
  BackendConfig c;
  EXPECT_NO_THROW(c.validate());
  c.max_in_flight = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.base_backoff = std::chrono::milliseconds(0);
  EXPECT_THROW(c.validate(), Error);
  c = {};
  EXPECT_EQ(c.max_in_flight, 4);
  EXPECT_EQ(c.max_retries, 3);
  EXPECT_EQ(c.base_backoff, std::chrono::milliseconds(1000));
  EXPECT_DOUBLE_EQ(c.temperature, 0.2);
  EXPECT_EQ(c.timeout, std::chrono::milliseconds(60000));
}

TEST(Complete, MockIsDeterministic) {
  auto req = request_for("a", "joy");
  auto r1 = mock_complete(req);
  auto r2 = mock_complete(req);
  ASSERT_TRUE(r1.ok());
  EXPECT_EQ(*r1.raw_text, *r2.raw_text);
  EXPECT_EQ(r1.prompt_hash, req.prompt_hash);
  EXPECT_EQ(r1.model_name, "gpt-4");
  EXPECT_FALSE(r1.timestamp.empty());
}

TEST(Complete, MockDialogueEmbedsEmotionInComplexAnswer) {
  auto r = mock_complete(request_for("a", "fear"));
  auto pairs = parse_dialogue(*r.raw_text);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_NE(pairs.back().second.find("fear"), std::string::npos);
  auto categorical = mock_complete(request_for("a", "fear", InstructionKind::categorical));
  EXPECT_EQ(*categorical.raw_text, "Predicted emotion: fear.");
}

TEST(Complete, RetryOn429ThenSuccess) {
  MockBackend backend;
  backend.script_failures("a", {FailureClass::rate_limit});
  UsageLedger ledger;
  std::vector<std::chrono::milliseconds> sleeps;
  auto r = complete(request_for("a", "joy"), fast_config(), backend, ledger, recording_sleeper(sleeps));
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(sleeps.size(), 1u);
  auto u = ledger.snapshot();
  EXPECT_EQ(u.request_count, 2);
  EXPECT_EQ(u.failures_by_class["rate_limit"], 1);
}

TEST(Complete, AuthIsTerminal) {
  MockBackend backend;
  backend.script_failures("a", {FailureClass::auth});
  UsageLedger ledger;
  std::vector<std::chrono::milliseconds> sleeps;
  auto r = complete(request_for("a", "joy"), fast_config(), backend, ledger, recording_sleeper(sleeps));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, FailureClass::auth);
  EXPECT_EQ(r.error->attempts, 1);
  EXPECT_TRUE(sleeps.empty());
  auto u = ledger.snapshot();
  EXPECT_EQ(u.request_count, 1);
  EXPECT_EQ(u.failures_by_class["auth"], 1);
}

TEST(Complete, RateLimitExhaustion) {
  MockBackend backend;
  backend.script_failures("a", std::vector<FailureClass>(10, FailureClass::rate_limit));
  UsageLedger ledger;
  std::vector<std::chrono::milliseconds> sleeps;
  auto config = fast_config();
  config.max_retries = 2;
  auto r = complete(request_for("a", "joy"), config, backend, ledger, recording_sleeper(sleeps));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, FailureClass::rate_limit);
  EXPECT_EQ(r.error->attempts, 3);
  EXPECT_EQ(ledger.snapshot().request_count, 3);
  EXPECT_EQ(sleeps.size(), 2u);
}

TEST(Complete, BackoffIsExponentialWithJitter) {
  BackendConfig c;
  c.base_backoff = std::chrono::milliseconds(100);
  for (int retry = 0; retry < 4; ++retry) {
    auto lo = backoff_delay(c, retry, 0.0, std::nullopt);
    auto hi = backoff_delay(c, retry, 0.999999, std::nullopt);
    EXPECT_EQ(lo.count(), 50 << retry);
    EXPECT_LE(hi.count(), 100 << retry);
    EXPECT_GE(hi.count(), (100 << retry) - 1);
  }
  EXPECT_EQ(backoff_delay(c, 1, 0.5, std::chrono::milliseconds(1234)).count(), 1234);
  EXPECT_EQ(backoff_delay(c, 30, 1.0, std::nullopt), kMaxBackoff);
}

TEST(Complete, ThrowingBackendBecomesTransportFailure) {
  struct Throwing : ChatBackend {
    AttemptOutcome attempt(const GenerationRequest&, const BackendConfig&) override {
      throw std::runtime_error("socket closed");
    }
  } backend;
  UsageLedger ledger;
  auto config = fast_config();
  config.max_retries = 1;
  auto r = complete(request_for("a", "joy"), config, backend, ledger, [](auto) {});
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, FailureClass::transport);
  EXPECT_EQ(ledger.snapshot().failures_by_class["transport"], 2);
}

TEST(CompleteBatch, OrderConcurrencyAndPerItemErrors) {
  MockOptions opts;
  opts.max_latency = std::chrono::milliseconds(5);
  MockBackend backend(opts);
  backend.script_failures("r1", {FailureClass::auth});
  std::vector<GenerationRequest> reqs;
  for (int i = 0; i < 10; ++i) reqs.push_back(request_for("r" + std::to_string(i), "joy"));
  UsageLedger ledger;
  auto results = complete_batch(reqs, fast_config(), backend, ledger);
  ASSERT_EQ(results.size(), reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) EXPECT_EQ(results[i].image_id, reqs[i].image_id);
  EXPECT_FALSE(results[1].ok());
  EXPECT_EQ(results[1].error->kind, FailureClass::auth);
  EXPECT_LE(backend.peak_in_flight(), 4);
  EXPECT_EQ(ledger.snapshot().request_count, 10);
}

TEST(CompleteBatch, SlowFirstItemKeepsPosition) {
  struct Slow : ChatBackend {
    AttemptOutcome attempt(const GenerationRequest& r, const BackendConfig&) override {
      if (r.image_id == "r1") std::this_thread::sleep_for(std::chrono::milliseconds(50));
      return AttemptOutcome::success("reply " + r.image_id);
    }
  } backend;
  std::vector<GenerationRequest> reqs = {request_for("r1", "joy"), request_for("r2", "joy"), request_for("r3", "joy")};
  UsageLedger ledger;
  auto results = complete_batch(reqs, fast_config(), backend, ledger);
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(*results[0].raw_text, "reply r1");
  EXPECT_EQ(*results[1].raw_text, "reply r2");
  EXPECT_EQ(*results[2].raw_text, "reply r3");
}

TEST(CompleteBatch, LedgerCountsEveryAttempt) {
  MockBackend backend;
  backend.script_failures("r0", {FailureClass::rate_limit, FailureClass::transport});
  backend.script_failures("r2", {FailureClass::auth});
  backend.script_failures("r3", {FailureClass::timeout});
  std::vector<GenerationRequest> reqs;
  for (int i = 0; i < 5; ++i) reqs.push_back(request_for("r" + std::to_string(i), "joy"));
  UsageLedger ledger;
  auto results = complete_batch(reqs, fast_config(), backend, ledger, [](auto) {});
  // 5 first attempts + 2 retries for r0 + 1 retry for r3
  EXPECT_EQ(ledger.snapshot().request_count, 8);
  EXPECT_EQ(backend.calls(), 8);
  EXPECT_EQ(std::count_if(results.begin(), results.end(), [](auto& r) { return r.ok(); }), 4);
}

TEST(CompleteBatch, EmptyInput) {
  MockBackend backend;
  UsageLedger ledger;
  EXPECT_TRUE(complete_batch({}, fast_config(), backend, ledger).empty());
}

TEST(Mock, CorruptionRateZeroAlwaysParses) {
  MockBackend backend;
  for (int i = 0; i < 300; ++i) {
    auto text = backend.reply_for(request_for("c" + std::to_string(i), "awe"));
    auto pairs = parse_dialogue(text);
    EXPECT_EQ(pairs.size(), 3u);
  }
}

TEST(Mock, CorruptionRateOneNeverSplits) {
  MockOptions opts;
  opts.corruption_rate = 1.0;
  MockBackend backend(opts);
  for (int i = 0; i < 100; ++i) {
    auto text = backend.reply_for(request_for("c" + std::to_string(i), "awe"));
    bool usable = true;
    try {
      usable = parse_dialogue(text).size() >= 3;
    } catch (const DialogueError&) {
      usable = false;
    }
    EXPECT_FALSE(usable) << text;
  }
}

TEST(CompletionsLog, RoundTrip) {
  testing::TempDir dir;
  auto ok = mock_complete(request_for("a", "joy"));
  CompletionResult bad = ok;
  bad.raw_text.reset();
  bad.error = BackendError{FailureClass::rate_limit, 4, "retries exhausted"};
  append_completion(dir / "log.jsonl", ok);
  append_completion(dir / "log.jsonl", bad);
  auto back = read_completions_log(dir / "log.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], ok);
  EXPECT_EQ(back[1], bad);
}

// ---------------------------------------------------------------------------
// Wire protocol against a local server

class ChatServer : public ::testing::Test {
 protected:
  void SetUp() override {
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(ChatServer, SendsChatBodyAndReadsReplyAndUsage) {
  json seen;
  std::string auth;
  server_.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(
        R"({"choices":[{"message":{"role":"assistant","content":"Question: q\nAnswer: a"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}})",
        "application/json");
  });
  HttpBackend backend(endpoint(), "sk-test");
  UsageLedger ledger;
  auto config = fast_config();
  config.model_name = "gpt-4-1106-preview";
  auto req = request_for("a", "joy");
  auto r = complete(req, config, backend, ledger);
  ASSERT_TRUE(r.ok()) << r.error->message;
  EXPECT_EQ(*r.raw_text, "Question: q\nAnswer: a");
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["model"], "gpt-4-1106-preview");
  EXPECT_DOUBLE_EQ(seen["temperature"].get<double>(), 0.2);
  ASSERT_EQ(seen["messages"].size(), req.messages.size());
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][1]["role"], "user");
  auto u = ledger.snapshot();
  EXPECT_EQ(u.prompt_tokens, 12);
  EXPECT_EQ(u.completion_tokens, 5);
}

TEST_F(ChatServer, RetriesAfter429) {
  std::atomic<int> hits{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 429;
      res.set_header("Retry-After", "0");
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
  });
  HttpBackend backend(endpoint(), "k");
  UsageLedger ledger;
  auto r = complete(request_for("a", "joy"), fast_config(), backend, ledger);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(ledger.snapshot().failures_by_class["rate_limit"], 1);
}

TEST_F(ChatServer, UnauthorizedIsTerminal) {
  std::atomic<int> hits{0};
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
  });
  HttpBackend backend(endpoint(), "bad");
  UsageLedger ledger;
  auto r = complete(request_for("a", "joy"), fast_config(), backend, ledger);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, FailureClass::auth);
  EXPECT_EQ(hits.load(), 1);
}

TEST_F(ChatServer, MalformedBody) {
  server_.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  HttpBackend backend(endpoint(), "k");
  UsageLedger ledger;
  auto r = complete(request_for("a", "joy"), fast_config(), backend, ledger);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->kind, FailureClass::malformed_response);
}

TEST(HttpBackend, ServerErrorsAreRetryableAndEndpointParsing) {
  EXPECT_EQ(*interpret_chat_response(503, "", std::nullopt).failure, FailureClass::transport);
  EXPECT_EQ(*interpret_chat_response(400, "bad", std::nullopt).failure, FailureClass::rejected);
  EXPECT_EQ(interpret_chat_response(429, "", "2").retry_after, std::chrono::milliseconds(2000));
  auto u = parse_endpoint("https://api.openai.com");
  EXPECT_EQ(u.scheme_host_port, "https://api.openai.com");
  EXPECT_EQ(u.path, "/v1/chat/completions");
  EXPECT_THROW(parse_endpoint("ftp://x"), Error);
  EXPECT_THROW(parse_endpoint("mock"), Error);
}

TEST(HttpBackend, ConnectionRefusedIsTransport) {
  // Bind and release a port so nothing is listening on it.
  int port;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  HttpBackend backend("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "k");
  UsageLedger ledger;
  auto config = fast_config();
  config.max_retries = 1;
  config.timeout = std::chrono::milliseconds(500);
  auto r = complete(request_for("a", "joy"), config, backend, ledger, [](auto) {});
  ASSERT_FALSE(r.ok());
  EXPECT_TRUE(is_retryable(r.error->kind));
  EXPECT_EQ(r.error->attempts, 2);
}

}  // namespace
}  // namespace emoforge
