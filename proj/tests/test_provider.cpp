#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "socialalign/provider.hpp"

using namespace socialalign;

TEST_CASE("replay mode returns recorded replies byte-identically") {
  const auto dir = std::filesystem::temp_directory_path() / "socialalign_test_fixtures";
  std::filesystem::remove_all(dir);

  ProviderRequest req{"sentiment_v1", "classify this", 8, 0.0};
  const std::string recorded = "angry\nwith a second line\tand a tab";
  write_fixture(dir.string(), req, recorded);

  EndpointConfig cfg;
  cfg.fixture_dir = dir.string();
  ProviderClient client(cfg);
  REQUIRE(client.replay_mode());

  auto reply = client.chat_complete(req);
  CHECK(reply.text == recorded);
  CHECK(reply.request_hash == ProviderClient::request_hash(req));

  ProviderRequest other{"sentiment_v1", "different prompt", 8, 0.0};
  CHECK_THROWS_AS(client.chat_complete(other), FixtureMissError);
}

TEST_CASE("request hash binds to content") {
  ProviderRequest a{"persona_v1", "prompt text", 256, 0.0};
  ProviderRequest b{"persona_v1", "prompt text", 256, 0.0};
  CHECK(ProviderClient::request_hash(a) == ProviderClient::request_hash(b));

  ProviderRequest c{"persona_v1", "prompt text!", 256, 0.0};
  CHECK(ProviderClient::request_hash(a) != ProviderClient::request_hash(c));

  ProviderRequest d{"judge_v1", "prompt text", 256, 0.0};
  CHECK(ProviderClient::request_hash(a) != ProviderClient::request_hash(d));

  ProviderRequest e{"persona_v1", "prompt text", 256, 0.7};
  CHECK(ProviderClient::request_hash(a) != ProviderClient::request_hash(e));
}

TEST_CASE("request validation") {
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1";
  ProviderClient client(cfg, [](const std::string&, const std::string&, const std::string&,
                                int) -> HttpResult { return {true, "", 200, "{}"}; });
  CHECK_THROWS_AS(client.chat_complete({"t", "", 8, 0.0}), ContractError);
  CHECK_THROWS_AS(client.chat_complete({"t", "x", 8, 2.5}), ContractError);
}

TEST_CASE("retry policy: exactly max_attempts tries, then transport error") {
  int calls = 0;
  auto failing = [&calls](const std::string&, const std::string&, const std::string&,
                          int) -> HttpResult {
    ++calls;
    return {false, "connection refused", 0, ""};
  };
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1";
  cfg.max_attempts = 3;
  cfg.backoff_initial_ms = 0;
  ProviderClient client(cfg, failing);
  CHECK_THROWS_AS(client.chat_complete({"t", "x", 8, 0.0}), TransportError);
  CHECK(calls == 3);
}

TEST_CASE("5xx retries then surfaces a service error; 4xx does not retry") {
  int calls = 0;
  auto flaky_500 = [&calls](const std::string&, const std::string&, const std::string&,
                            int) -> HttpResult {
    ++calls;
    return {true, "", 503, "overloaded"};
  };
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1";
  cfg.max_attempts = 3;
  cfg.backoff_initial_ms = 0;
  {
    ProviderClient client(cfg, flaky_500);
    try {
      client.chat_complete({"t", "x", 8, 0.0});
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 503);
      CHECK(e.body_excerpt() == "overloaded");
    }
    CHECK(calls == 3);
  }
  {
    calls = 0;
    auto bad_request = [&calls](const std::string&, const std::string&, const std::string&,
                                int) -> HttpResult {
      ++calls;
      return {true, "", 400, "bad"};
    };
    ProviderClient client(cfg, bad_request);
    CHECK_THROWS_AS(client.chat_complete({"t", "x", 8, 0.0}), ServiceError);
    CHECK(calls == 1);
  }
}

TEST_CASE("recovery on a later attempt succeeds") {
  int calls = 0;
  auto flaky = [&calls](const std::string&, const std::string&, const std::string&,
                        int) -> HttpResult {
    ++calls;
    if (calls < 3) return {false, "timeout", 0, ""};
    return {true, "", 200, R"({"choices":[{"message":{"content":"ok"}}]})"};
  };
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1";
  cfg.max_attempts = 3;
  cfg.backoff_initial_ms = 0;
  ProviderClient client(cfg, flaky);
  auto reply = client.chat_complete({"t", "x", 8, 0.0});
  CHECK(reply.text == "ok");
  CHECK(calls == 3);
}

TEST_CASE("wire body follows the chat-completion schema and prompt is unmutated") {
  std::string captured_body;
  auto capture = [&captured_body](const std::string&, const std::string&, const std::string& body,
                                  int) -> HttpResult {
    captured_body = body;
    return {true, "", 200, R"({"choices":[{"message":{"content":"fine"}}]})"};
  };
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1/chat/completions";
  cfg.model = "test-model";
  ProviderClient client(cfg, capture);
  const std::string prompt = "exact prompt \n with newline";
  client.chat_complete({"t", prompt, 64, 0.25});

  auto j = nlohmann::json::parse(captured_body);
  CHECK(j.at("model") == "test-model");
  CHECK(j.at("temperature") == 0.25);
  CHECK(j.at("max_tokens") == 64);
  REQUIRE(j.at("messages").size() == 1);
  CHECK(j.at("messages")[0].at("role") == "user");
  CHECK(j.at("messages")[0].at("content") == prompt);
}

TEST_CASE("unparseable provider envelope is a format error with the raw body") {
  EndpointConfig cfg;
  cfg.url = "http://scripted.local/v1";
  ProviderClient client(cfg, [](const std::string&, const std::string&, const std::string&,
                                int) -> HttpResult { return {true, "", 200, "plain text"}; });
  try {
    client.chat_complete({"t", "x", 8, 0.0});
    FAIL("expected ProviderFormatError");
  } catch (const ProviderFormatError& e) {
    CHECK(e.raw_reply() == "plain text");
  }
}
