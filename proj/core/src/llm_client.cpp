#include "townsim/llm_client.hpp"

#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace townsim {

using json = nlohmann::json;

namespace {

struct ParsedEndpoint {
  std::string scheme = "http";
  std::string host;
  int port = 80;
  std::string base_path;  // prefix prepended to /chat/completions
};

ParsedEndpoint parse_endpoint(const std::string& url) {
  ParsedEndpoint out;
  std::string rest = url;
  if (rest.rfind("http://", 0) == 0) {
    out.scheme = "http";
    rest = rest.substr(7);
  } else if (rest.rfind("https://", 0) == 0) {
    out.scheme = "https";
    out.port = 443;
    rest = rest.substr(8);
  }
  const std::size_t slash = rest.find('/');
  std::string authority = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (slash != std::string::npos) {
    out.base_path = rest.substr(slash);
    while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  }
  const std::size_t colon = authority.find(':');
  if (colon != std::string::npos) {
    out.host = authority.substr(0, colon);
    out.port = std::stoi(authority.substr(colon + 1));
  } else {
    out.host = authority;
  }
  if (out.host.empty()) {
    throw BackendUnavailable("remote backend endpoint is empty or unparseable: " + url);
  }
  return out;
}

}  // namespace

struct RemoteLlmBackend::Impl {
  explicit Impl(const LlmConfig& config)
      : endpoint(parse_endpoint(config.endpoint)),
        inflight(std::max(1, config.max_inflight)) {}

  ParsedEndpoint endpoint;
  std::counting_semaphore<256> inflight;
};

RemoteLlmBackend::RemoteLlmBackend(LlmConfig config, std::string transcript_path)
    : config_(std::move(config)),
      impl_(std::make_unique<Impl>(config_)),
      transcript_path_(std::move(transcript_path)) {
  if (config_.max_inflight > 256) {
    throw std::invalid_argument("llm.max_inflight must be at most 256");
  }
}

RemoteLlmBackend::~RemoteLlmBackend() = default;

LlmConfig RemoteLlmBackend::with_env_overrides(LlmConfig config) {
  if (const char* ep = std::getenv("TOWNSIM_LLM_ENDPOINT")) config.endpoint = ep;
  if (const char* key = std::getenv("TOWNSIM_LLM_API_KEY")) config.api_key = key;
  if (const char* model = std::getenv("TOWNSIM_LLM_MODEL")) config.model = model;
  return config;
}

std::string RemoteLlmBackend::post_chat(const std::string& prompt) {
  const ParsedEndpoint& ep = impl_->endpoint;
  httplib::Client client(ep.host, ep.port);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  json body;
  body["model"] = config_.model;
  body["temperature"] = config_.temperature;
  body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});

  httplib::Result res = client.Post(ep.base_path + "/chat/completions", headers, body.dump(),
                                    "application/json");
  if (!res) {
    throw BackendTransientError("remote backend unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendTransientError("remote backend returned HTTP " + std::to_string(res->status));
  }
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array() ||
      parsed["choices"].empty()) {
    throw BackendTransientError("remote backend response had no choices");
  }
  const json& first = parsed["choices"][0];
  if (!first.contains("message") || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    throw BackendTransientError("remote backend response had no message content");
  }
  return first["message"]["content"].get<std::string>();
}

void RemoteLlmBackend::log_exchange(const DecisionContext& ctx, const std::string& prompt,
                                    const std::string& response) {
  if (transcript_path_.empty()) return;
  json rec;
  rec["agent"] = ctx.agent.name;
  rec["day"] = ctx.now.day;
  rec["tick"] = ctx.now.tick;
  rec["attempt"] = static_cast<int>(ctx.feedback.size()) + 1;
  rec["kind"] = to_string(ctx.prompt_kind);
  rec["prompt"] = prompt;
  rec["response"] = response;
  std::lock_guard<std::mutex> lock(transcript_mutex_);
  std::ofstream out(transcript_path_, std::ios::app);
  out << rec.dump() << "\n";
}

std::string RemoteLlmBackend::decide(const DecisionContext& ctx) {
  const std::string prompt = assemble_prompt(ctx);
  impl_->inflight.acquire();
  struct Release {
    std::counting_semaphore<256>& sem;
    ~Release() { sem.release(); }
  } release{impl_->inflight};

  std::string response;
  std::string last_error;
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {  // one retry per call
    try {
      response = post_chat(prompt);
      ok = true;
    } catch (const BackendTransientError& e) {
      last_error = e.what();
    }
  }
  {
    std::lock_guard<std::mutex> lock(failure_mutex_);
    if (ok) {
      consecutive_failures_ = 0;
    } else {
      ++consecutive_failures_;
      if (consecutive_failures_ >= config_.max_consecutive_failures) {
        throw BackendUnavailable("remote backend failed " +
                                 std::to_string(consecutive_failures_) +
                                 " calls in a row; last error: " + last_error);
      }
    }
  }
  if (!ok) throw BackendTransientError(last_error);
  log_exchange(ctx, prompt, response);
  return response;
}

}  // namespace townsim
