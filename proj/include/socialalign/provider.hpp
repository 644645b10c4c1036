#pragma once

// One client for every external text-model call (persona extraction,
// sentiment classification, judge scoring); they differ only in the template
// id baked into the request. Three modes:
//   - live: POST a chat-completion request to the configured endpoint
//   - replay: serve recorded replies from fixtures/<request-hash>.txt
//   - injected transport: tests script the endpoint behavior in-process
// The default test suite only ever uses the latter two.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <utility>

#include <json.hpp>

#include "socialalign/errors.hpp"

namespace socialalign {

struct ProviderRequest {
  std::string template_id;
  std::string prompt;
  int max_tokens = 512;
  double temperature = 0.0;
};

struct ProviderReply {
  std::string text;
  double latency_ms = 0.0;
  std::string request_hash;
};

struct HttpResult {
  bool transport_ok = false;
  std::string error;
  int status = 0;
  std::string body;
};

// (url, api_key, json_body, timeout_ms) -> result
using Transport =
    std::function<HttpResult(const std::string&, const std::string&, const std::string&, int)>;

struct EndpointConfig {
  std::string url;
  std::string api_key;
  std::string model = "default";
  int timeout_ms = 30000;
  int max_attempts = 3;
  int backoff_initial_ms = 500;  // doubled after each failed attempt
  int max_in_flight = 4;
  std::string fixture_dir;  // non-empty switches the client to replay mode

  // Credentials come from the environment only, never from config files.
  static EndpointConfig from_env() {
    EndpointConfig cfg;
    if (const char* v = std::getenv("SOCIALALIGN_PROVIDER_URL")) cfg.url = v;
    if (const char* v = std::getenv("SOCIALALIGN_PROVIDER_KEY")) cfg.api_key = v;
    if (const char* v = std::getenv("SOCIALALIGN_PROVIDER_MODEL")) cfg.model = v;
    return cfg;
  }
};

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a64_hex(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

// Implemented at the bottom of this header on top of cpp-httplib.
inline HttpResult default_http_transport(const std::string& url, const std::string& api_key,
                                         const std::string& body, int timeout_ms);

class ProviderClient {
 public:
  explicit ProviderClient(EndpointConfig cfg, Transport transport = nullptr)
      : cfg_(std::move(cfg)),
        transport_(transport ? std::move(transport) : Transport(default_http_transport)),
        in_flight_(cfg_.max_in_flight > 0 ? cfg_.max_in_flight : 1) {}

  bool replay_mode() const { return !cfg_.fixture_dir.empty(); }
  const EndpointConfig& config() const { return cfg_; }

  // Binds the reply to the request content; identical requests hash alike.
  static std::string request_hash(const ProviderRequest& req) {
    char params[64];
    std::snprintf(params, sizeof(params), "%d\x1f%.6g", req.max_tokens, req.temperature);
    return fnv1a64_hex(req.template_id + '\x1f' + req.prompt + '\x1f' + params);
  }

  ProviderReply chat_complete(const ProviderRequest& req) {
    if (req.prompt.empty()) throw ContractError("chat_complete: empty prompt");
    if (req.temperature < 0.0 || req.temperature > 2.0)
      throw ContractError("chat_complete: temperature outside [0,2]");
    const std::string hash = request_hash(req);

    if (replay_mode()) {
      const auto path = std::filesystem::path(cfg_.fixture_dir) / (hash + ".txt");
      std::ifstream f(path, std::ios::binary);
      if (!f)
        throw FixtureMissError("no fixture for request " + hash + " (template " + req.template_id +
                               ") under " + cfg_.fixture_dir);
      std::ostringstream ss;
      ss << f.rdbuf();
      return {ss.str(), 0.0, hash};
    }

    if (cfg_.url.empty())
      throw ConfigError("provider endpoint not configured (set SOCIALALIGN_PROVIDER_URL)");

    nlohmann::json body{{"model", cfg_.model},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", req.prompt}}})},
                        {"temperature", req.temperature},
                        {"max_tokens", req.max_tokens}};
    const std::string payload = body.dump();

    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight_};

    const auto start = std::chrono::steady_clock::now();
    HttpResult last;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      last = transport_(cfg_.url, cfg_.api_key, payload, cfg_.timeout_ms);
      const bool retryable = !last.transport_ok || last.status >= 500;
      if (last.transport_ok && last.status >= 200 && last.status < 300) {
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
        return {parse_reply(last.body), ms, hash};
      }
      if (!retryable) break;
      if (attempt < cfg_.max_attempts) {
        const int delay = cfg_.backoff_initial_ms << (attempt - 1);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
    if (!last.transport_ok)
      throw TransportError("provider unreachable after " + std::to_string(cfg_.max_attempts) +
                           " attempts: " + last.error);
    throw ServiceError("provider returned status " + std::to_string(last.status), last.status,
                       last.body.substr(0, 256));
  }

 private:
  static std::string parse_reply(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderFormatError(std::string("unparseable provider reply: ") + e.what(), body);
    }
  }

  EndpointConfig cfg_;
  Transport transport_;
  std::counting_semaphore<> in_flight_;
};

// Writes a reply fixture for the given request so a later replay-mode client
// returns it byte-identically.
inline void write_fixture(const std::string& fixture_dir, const ProviderRequest& req,
                          const std::string& reply_text) {
  std::filesystem::create_directories(fixture_dir);
  const auto path =
      std::filesystem::path(fixture_dir) / (ProviderClient::request_hash(req) + ".txt");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write fixture " + path.string());
  f << reply_text;
}

}  // namespace socialalign

#include <httplib.h>

namespace socialalign {

inline HttpResult default_http_transport(const std::string& url, const std::string& api_key,
                                         const std::string& body, int timeout_ms) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return {false, "malformed endpoint url: " + url, 0, ""};
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client cli(base);
  cli.set_connection_timeout(0, timeout_ms * 1000);
  cli.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
  auto res = cli.Post(path, headers, body, "application/json");
  if (!res) return {false, httplib::to_string(res.error()), 0, ""};
  return {true, "", res->status, res->body};
}

}  // namespace socialalign
