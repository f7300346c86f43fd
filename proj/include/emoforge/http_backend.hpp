#pragma once

// OpenAI-compatible chat-completion backend over HTTP(S).

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <emoforge/llm_client.hpp>

#include <cstdlib>

namespace emoforge {

inline constexpr const char* kApiKeyEnv = "EMOFORGE_API_KEY";

struct EndpointUrl {
  std::string scheme_host_port;  // "https://api.openai.com"
  std::string path;              // "/v1/chat/completions"
};

inline EndpointUrl parse_endpoint(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, "endpoint must be an http(s) URL: " + std::string(url));
  }
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::invalid_argument, "unsupported endpoint scheme: " + std::string(scheme));
  }
  auto path_start = url.find('/', scheme_end + 3);
  EndpointUrl out;
  out.scheme_host_port = std::string(url.substr(0, path_start));
  out.path = path_start == std::string_view::npos ? "/v1/chat/completions" : std::string(url.substr(path_start));
  return out;
}

inline json chat_request_body(const GenerationRequest& request, const BackendConfig& config) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back(json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  return json{{"model", config.model_name}, {"messages", messages}, {"temperature", config.temperature}};
}

// Maps one HTTP response onto an attempt outcome.
inline AttemptOutcome interpret_chat_response(int status, const std::string& body,
                                              std::optional<std::string> retry_after_header) {
  if (status == 401 || status == 403) return AttemptOutcome::fail(FailureClass::auth, "HTTP " + std::to_string(status));
  if (status == 429) {
    auto o = AttemptOutcome::fail(FailureClass::rate_limit, "HTTP 429");
    if (retry_after_header) {
      char* end = nullptr;
      double seconds = std::strtod(retry_after_header->c_str(), &end);
      if (end != retry_after_header->c_str() && seconds >= 0) {
        o.retry_after = std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
      }
    }
    return o;
  }
  if (status == 408) return AttemptOutcome::fail(FailureClass::timeout, "HTTP 408");
  if (status >= 500) return AttemptOutcome::fail(FailureClass::transport, "HTTP " + std::to_string(status));
  if (status != 200) return AttemptOutcome::fail(FailureClass::rejected, "HTTP " + std::to_string(status) + ": " + body.substr(0, 200));

  try {
    auto j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw std::runtime_error("content is not a string");
    auto outcome = AttemptOutcome::success(content.get<std::string>());
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      outcome.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      outcome.completion_tokens = u->value("completion_tokens", std::int64_t{0});
    }
    return outcome;
  } catch (const std::exception& e) {
    return AttemptOutcome::fail(FailureClass::malformed_response, e.what());
  }
}

class HttpBackend : public ChatBackend {
 public:
  HttpBackend(std::string endpoint, std::string api_key)
      : url_(parse_endpoint(endpoint)), api_key_(std::move(api_key)) {}

  AttemptOutcome attempt(const GenerationRequest& request, const BackendConfig& config) override {
    httplib::Client client(url_.scheme_host_port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(url_.path, headers, chat_request_body(request, config).dump(), "application/json");
    if (!res) {
      auto err = res.error();
      auto cls = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                     ? FailureClass::timeout
                     : FailureClass::transport;
      return AttemptOutcome::fail(cls, httplib::to_string(err));
    }
    std::optional<std::string> retry_after;
    if (res->has_header("Retry-After")) retry_after = res->get_header_value("Retry-After");
    return interpret_chat_response(res->status, res->body, retry_after);
  }

 private:
  EndpointUrl url_;
  std::string api_key_;
};

inline std::string api_key_from_env() {
  const char* key = std::getenv(kApiKeyEnv);
  return key ? std::string(key) : std::string{};
}

}  // namespace emoforge
