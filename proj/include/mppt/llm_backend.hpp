#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mppt::tscot {

struct Sampling {
  double temperature = 0.0;
  int max_output_tokens = 512;
};

inline constexpr std::string_view kMockEndpoint = "MOCK";

struct LlmBackendConfig {
  std::string model_id = "gpt-3.5-turbo-0301";
  Sampling sampling;
  std::string endpoint = "https://api.openai.com/v1";  // or kMockEndpoint
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{500};
  std::filesystem::path fixtures_dir;  // required for the mock endpoint

  bool is_mock() const { return endpoint == kMockEndpoint; }
  // Throws InvalidConfig.
  void validate() const;

  nlohmann::json to_json() const;
  static LlmBackendConfig from_json(const nlohmann::json& j);
};

// A failure worth retrying (connection reset, 429, 5xx, injected fault).
class TransientBackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;

  // One single-turn completion. Throws TransientBackendError for retryable
  // failures and mppt::Error(BackendUnavailable) for permanent ones.
  virtual std::string complete(std::string_view instruction, const LlmBackendConfig& config) = 0;

  // Number of complete() invocations so far, failed ones included.
  virtual std::size_t request_count() const = 0;
};

// Answers from JSON rule files in a fixtures directory; never touches the
// network. Every *.json file in the directory contributes rules, in filename
// order:
//
//   {"rules": [{"contains": ["Hillary Clinton", "angles"],
//               "responses": ["1. Personal characteristics\n2. ..."],
//               "fail_first": 0}]}
//
// The first rule whose "contains" strings all occur in the instruction wins.
// The n-th call to a rule returns responses[min(n, size-1)] after the first
// `fail_first` calls have thrown TransientBackendError. Responses may use the
// placeholders {target}, {gamma}, {input} and {perspective}, filled from the
// parsed instruction.
class MockBackend final : public LlmBackend {
 public:
  explicit MockBackend(const std::filesystem::path& fixtures_dir);

  std::string complete(std::string_view instruction, const LlmBackendConfig& config) override;
  std::size_t request_count() const override { return calls_.load(); }

 private:
  struct Rule {
    std::vector<std::string> contains;
    std::vector<std::string> responses;
    std::size_t fail_first = 0;
    std::size_t hits = 0;
  };

  std::vector<Rule> rules_;
  std::mutex mutex_;
  std::atomic<std::size_t> calls_{0};
};

// OpenAI-compatible chat-completions client: POST {base}/chat/completions.
class HttpBackend final : public LlmBackend {
 public:
  HttpBackend(std::string base_url, std::string api_key);

  std::string complete(std::string_view instruction, const LlmBackendConfig& config) override;
  std::size_t request_count() const override { return calls_.load(); }

  static nlohmann::json request_body(std::string_view instruction, const LlmBackendConfig& config);
  // Throws BackendUnavailable when the payload has no message content.
  static std::string extract_content(const nlohmann::json& response);

 private:
  std::string base_url_;
  std::string api_key_;
  std::atomic<std::size_t> calls_{0};
};

// MOCK endpoint -> MockBackend. Otherwise an HttpBackend whose base URL is
// MPPT_LLM_BASE_URL when set, else config.endpoint; the key comes from
// MPPT_LLM_API_KEY.
std::unique_ptr<LlmBackend> make_backend(const LlmBackendConfig& config);

}  // namespace mppt::tscot
