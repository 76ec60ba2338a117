#include <gtest/gtest.h>

#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>

#include "cascade/http_client.hpp"
#include "cascade/router.hpp"
#include "cascade/stub_llm.hpp"
#include "support.hpp"

using namespace cascade;

namespace {

std::string completion(const std::string& content) {
  return json{{"id", "x"}, {"choices", json::array({json{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}}
      .dump();
}

// Loopback chat-completions endpoint answering from a script of (status, body) pairs;
// the last entry repeats once the script runs out.
class MockEndpoint {
 public:
  explicit MockEndpoint(std::deque<std::pair<int, std::string>> script) : script_(std::move(script)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      requests_.push_back(req.body);
      auth_.push_back(req.get_header_value("Authorization"));
      auto [status, body] = script_.front();
      if (script_.size() > 1) script_.pop_front();
      if (body == "<echo>") body = completion(json::parse(req.body)["messages"][0]["content"].get<std::string>());
      res.status = status;
      res.set_content(body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::vector<std::string> requests() {
    std::lock_guard lock(mutex_);
    return requests_;
  }
  std::vector<std::string> auth() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::deque<std::pair<int, std::string>> script_;
  std::vector<std::string> requests_;
  std::vector<std::string> auth_;
};

LlmEndpointConfig fast_config(const std::string& base_url, int retries = 2) {
  LlmEndpointConfig cfg;
  cfg.base_url = base_url;
  cfg.model_name = "test-model";
  cfg.max_retries = retries;
  cfg.timeout = std::chrono::milliseconds(5000);
  cfg.initial_backoff = std::chrono::milliseconds(1);
  cfg.max_backoff = std::chrono::milliseconds(4);
  return cfg;
}

}  // namespace

TEST(HttpClient, LoopbackReturnsContentVerbatim) {
  MockEndpoint server({{200, completion("{\"intent\":\"a\"}")}});
  HttpLlmClient client(fast_config(server.base_url()));
  auto r = client.complete("prompt text");
  EXPECT_EQ(r.raw_text, "{\"intent\":\"a\"}");
  EXPECT_GT(r.latency_seconds, 0.0);
  EXPECT_EQ(r.attempt_count, 1u);

  auto sent = json::parse(server.requests().at(0));
  EXPECT_EQ(sent["model"], "test-model");
  EXPECT_EQ(sent["temperature"], 0.0);
  EXPECT_EQ(sent["messages"][0]["role"], "user");
  EXPECT_EQ(sent["messages"][0]["content"], "prompt text");
  EXPECT_EQ(server.auth().at(0), "");
}

TEST(HttpClient, RetriesServerErrorsThenSucceeds) {
  MockEndpoint server({{500, "busy"}, {500, "busy"}, {200, completion("ok")}});
  HttpLlmClient client(fast_config(server.base_url(), 2));
  auto r = client.complete("p");
  EXPECT_EQ(r.raw_text, "ok");
  EXPECT_EQ(r.attempt_count, 3u);
  EXPECT_EQ(server.requests().size(), 3u);
}

TEST(HttpClient, RateLimitIsRetried) {
  MockEndpoint server({{429, "slow down"}, {200, completion("ok")}});
  HttpLlmClient client(fast_config(server.base_url(), 1));
  EXPECT_EQ(client.complete("p").attempt_count, 2u);
}

TEST(HttpClient, ExhaustedRetriesReportLastStatus) {
  MockEndpoint server({{503, "down for maintenance"}});
  HttpLlmClient client(fast_config(server.base_url(), 2));
  try {
    client.complete("p");
    FAIL();
  } catch (const HttpStatusError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.body_excerpt(), "down for maintenance");
  }
  EXPECT_EQ(server.requests().size(), 3u);
}

TEST(HttpClient, ClientErrorsFailImmediately) {
  MockEndpoint server({{400, "{\"error\":\"bad model\"}"}});
  HttpLlmClient client(fast_config(server.base_url(), 3));
  try {
    client.complete("p");
    FAIL();
  } catch (const HttpStatusError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_NE(std::string(e.what()).find("bad model"), std::string::npos);
  }
  EXPECT_EQ(server.requests().size(), 1u);
}

TEST(HttpClient, UnreachableHostIsTransportError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }  // closed again: nothing listens there now
  HttpLlmClient client(fast_config("http://127.0.0.1:" + std::to_string(port) + "/v1", 0));
  try {
    client.complete("p");
    FAIL();
  } catch (const HttpStatusError&) {
    FAIL() << "no HTTP exchange took place";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("1 attempt"), std::string::npos) << e.what();
  }
}

TEST(HttpClient, MalformedBodyIsTransportError) {
  MockEndpoint server({{200, "<html>gateway</html>"}, {200, "{\"choices\": []}"}});
  HttpLlmClient client(fast_config(server.base_url()));
  EXPECT_THROW(client.complete("p"), TransportError);
  EXPECT_THROW(client.complete("p"), TransportError);
}

TEST(HttpClient, BearerTokenComesFromEnvironment) {
  MockEndpoint server({{200, completion("ok")}});
  auto cfg = fast_config(server.base_url());
  ::setenv("CASCADE_TEST_TOKEN", "s3cret", 1);
  cfg.load_auth_from_env("CASCADE_TEST_TOKEN");
  ::unsetenv("CASCADE_TEST_TOKEN");
  HttpLlmClient client(cfg);
  client.complete("p");
  EXPECT_EQ(server.auth().at(0), "Bearer s3cret");

  LlmEndpointConfig unset;
  unset.load_auth_from_env("CASCADE_TEST_TOKEN_UNSET");
  EXPECT_FALSE(unset.auth_token);
}

TEST(HttpClient, TranscriptRecordsExchanges) {
  ct::TempDir dir;
  MockEndpoint server({{500, "x"}, {200, completion("{\"intent\":\"a\"}")}, {404, "missing"}});
  auto cfg = fast_config(server.base_url(), 1);
  cfg.transcript_path = (dir / "t.jsonl").string();
  HttpLlmClient client(cfg);
  client.complete("first");
  EXPECT_THROW(client.complete("second"), HttpStatusError);
  std::vector<json> lines;
  io::for_each_line(dir / "t.jsonl", [&](std::size_t, std::string_view line) { lines.push_back(json::parse(line)); });
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0]["request"]["messages"][0]["content"], "first");
  EXPECT_EQ(lines[0]["status"], 200);
  EXPECT_EQ(lines[0]["attempts"], 2);
  EXPECT_EQ(lines[1]["status"], 404);
  EXPECT_EQ(lines[1]["response"], "missing");
}

TEST(HttpClient, ConfigValidationAndBackoff) {
  auto cfg = fast_config("http://localhost:1/v1");
  cfg.initial_backoff = std::chrono::milliseconds(500);
  cfg.max_backoff = std::chrono::milliseconds(8000);
  EXPECT_EQ(backoff_delay(cfg, 0).count(), 500);
  EXPECT_EQ(backoff_delay(cfg, 1).count(), 1000);
  EXPECT_EQ(backoff_delay(cfg, 3).count(), 4000);
  EXPECT_EQ(backoff_delay(cfg, 10).count(), 8000);

  auto bad = cfg;
  bad.timeout = std::chrono::milliseconds(0);
  EXPECT_THROW(HttpLlmClient{bad}, ValidationError);
  bad = cfg;
  bad.max_retries = -1;
  EXPECT_THROW(HttpLlmClient{bad}, ValidationError);
  bad = cfg;
  bad.base_url = "localhost:8000";
  EXPECT_THROW(HttpLlmClient{bad}, ValidationError);
  bad = cfg;
  bad.model_name.clear();
  EXPECT_THROW(HttpLlmClient{bad}, ValidationError);
}

TEST(HttpClient, DrivesLlmOnlyRunOverLoopback) {
  MockEndpoint server({{200, "<echo>"}});
  LabelSpace labels({"a", "b"});
  Corpus corpus{ct::dialogue("d", {"a", "b", "UNK", "a"})};
  HttpLlmClient client(fast_config(server.base_url()));
  auto decisions = run_llm_only(corpus, client, labels, RouterConfig{});
  // The only intent object in an echoed prompt is the format example, which names no offered label.
  for (const auto& d : decisions) {
    EXPECT_EQ(d.final_label, "UNK");
    EXPECT_EQ(d.llm_parse_ok, false);
    EXPECT_TRUE(parse_prompt(*d.llm_reply).has_value());
  }
  EXPECT_EQ(server.requests().size(), 4u);
}
