#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "townsim/decision.hpp"
#include "townsim/world.hpp"

namespace townsim {

// Decision backend that asks an OpenAI-style chat-completions endpoint for
// plans. Transport failures are retried once per call; persistent failure
// across max_consecutive_failures calls raises BackendUnavailable so the run
// aborts instead of silently degrading to the oracle forever.
class RemoteLlmBackend : public DecisionBackend {
 public:
  explicit RemoteLlmBackend(LlmConfig config, std::string transcript_path = "");
  ~RemoteLlmBackend() override;

  std::string name() const override { return "remote"; }
  std::string decide(const DecisionContext& ctx) override;

  // Reads TOWNSIM_LLM_ENDPOINT / TOWNSIM_LLM_API_KEY over the scenario values.
  static LlmConfig with_env_overrides(LlmConfig config);

 private:
  std::string post_chat(const std::string& prompt);
  void log_exchange(const DecisionContext& ctx, const std::string& prompt,
                    const std::string& response);

  LlmConfig config_;
  struct Impl;  // hides the HTTP client and semaphore from the header
  std::unique_ptr<Impl> impl_;
  std::mutex transcript_mutex_;
  std::string transcript_path_;
  std::mutex failure_mutex_;
  int consecutive_failures_ = 0;
};

}  // namespace townsim
