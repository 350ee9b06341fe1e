#include "mppt/llm_backend.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>

#include "httplib.h"
#include "mppt/common.hpp"
#include "mppt/tscot.hpp"
#include "mppt/util.hpp"

namespace mppt::tscot {

using nlohmann::json;

void LlmBackendConfig::validate() const {
  if (model_id.empty()) throw Error(ErrorCode::InvalidConfig, "llm.model_id is empty");
  if (sampling.temperature < 0.0) throw Error(ErrorCode::InvalidConfig, "llm temperature must be >= 0");
  if (sampling.max_output_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "llm max_output_tokens must be positive");
  if (max_retries < 0) throw Error(ErrorCode::InvalidConfig, "llm max_retries must be >= 0");
  if (is_mock() && (fixtures_dir.empty() || !std::filesystem::is_directory(fixtures_dir))) {
    throw Error(ErrorCode::InvalidConfig, "MOCK endpoint needs an existing fixtures directory");
  }
}

json LlmBackendConfig::to_json() const {
  return {{"model_id", model_id},
          {"temperature", sampling.temperature},
          {"max_output_tokens", sampling.max_output_tokens},
          {"endpoint", endpoint},
          {"timeout_ms", timeout.count()},
          {"max_retries", max_retries},
          {"retry_backoff_ms", retry_backoff.count()},
          {"fixtures", fixtures_dir.string()}};
}

LlmBackendConfig LlmBackendConfig::from_json(const json& j) {
  LlmBackendConfig c;
  c.model_id = j.value("model_id", c.model_id);
  c.sampling.temperature = j.value("temperature", c.sampling.temperature);
  c.sampling.max_output_tokens = j.value("max_output_tokens", c.sampling.max_output_tokens);
  c.endpoint = j.value("endpoint", c.endpoint);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", c.retry_backoff.count()));
  c.fixtures_dir = j.value("fixtures", std::string());
  return c;
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

MockBackend::MockBackend(const std::filesystem::path& fixtures_dir) {
  if (!std::filesystem::is_directory(fixtures_dir)) {
    throw Error(ErrorCode::InvalidConfig, "mock fixtures directory " + fixtures_dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(fixtures_dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    try {
      const json j = json::parse(read_file(file));
      for (const auto& r : j.at("rules")) {
        Rule rule;
        rule.contains = r.value("contains", std::vector<std::string>{});
        rule.responses = r.at("responses").get<std::vector<std::string>>();
        rule.fail_first = r.value("fail_first", std::size_t{0});
        if (rule.responses.empty()) throw Error(ErrorCode::InvalidConfig, file.string() + ": rule without responses");
        rules_.push_back(std::move(rule));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, file.string() + ": " + e.what());
    }
  }
}

std::string MockBackend::complete(std::string_view instruction, const LlmBackendConfig&) {
  ++calls_;
  std::string response;
  {
    std::lock_guard lock(mutex_);
    auto rule = std::find_if(rules_.begin(), rules_.end(), [&](const Rule& r) {
      return std::all_of(r.contains.begin(), r.contains.end(),
                         [&](const std::string& needle) { return instruction.find(needle) != std::string_view::npos; });
    });
    if (rule == rules_.end()) {
      throw Error(ErrorCode::BackendUnavailable, "no mock rule matches instruction: " + std::string(instruction.substr(0, 120)));
    }
    const std::size_t hit = rule->hits++;
    if (hit < rule->fail_first) throw TransientBackendError("injected mock failure");
    response = rule->responses[std::min(hit - rule->fail_first, rule->responses.size() - 1)];
  }

  if (auto s2 = parse_s2(instruction)) {
    replace_all(response, "{target}", s2->target);
    replace_all(response, "{input}", s2->input);
    replace_all(response, "{perspective}", s2->perspective);
  } else if (auto s1 = parse_s1(instruction)) {
    replace_all(response, "{target}", s1->target);
    replace_all(response, "{gamma}", std::to_string(s1->gamma));
  }
  return response;
}

HttpBackend::HttpBackend(std::string base_url, std::string api_key)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

json HttpBackend::request_body(std::string_view instruction, const LlmBackendConfig& config) {
  return {{"model", config.model_id},
          {"messages", json::array({{{"role", "user"}, {"content", std::string(instruction)}}})},
          {"temperature", config.sampling.temperature},
          {"max_tokens", config.sampling.max_output_tokens}};
}

std::string HttpBackend::extract_content(const json& response) {
  try {
    return response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("unexpected completion payload: ") + e.what());
  }
}

std::string HttpBackend::complete(std::string_view instruction, const LlmBackendConfig& config) {
  ++calls_;
  // Split "scheme://host[:port]/prefix" into the client origin and path prefix.
  const auto scheme_end = base_url_.find("://");
  const auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? base_url_ : base_url_.substr(0, path_start);
  const std::string prefix = path_start == std::string::npos ? std::string() : base_url_.substr(path_start);

  httplib::Client client(origin);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  client.set_connection_timeout(seconds);
  client.set_read_timeout(seconds);
  client.set_write_timeout(seconds);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto body = request_body(instruction, config).dump(-1, ' ', false, json::error_handler_t::replace);
  auto result = client.Post(prefix + "/chat/completions", headers, body, "application/json");
  if (!result) throw TransientBackendError("HTTP request failed: " + httplib::to_string(result.error()));
  if (result->status == 429 || result->status >= 500) {
    throw TransientBackendError("HTTP status " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw Error(ErrorCode::BackendUnavailable, "HTTP status " + std::to_string(result->status) + ": " + result->body.substr(0, 200));
  }
  json payload;
  try {
    payload = json::parse(result->body);
  } catch (const json::exception&) {
    throw TransientBackendError("non-JSON completion payload");
  }
  return extract_content(payload);
}

std::unique_ptr<LlmBackend> make_backend(const LlmBackendConfig& config) {
  config.validate();
  if (config.is_mock()) return std::make_unique<MockBackend>(config.fixtures_dir);
  const char* base = std::getenv("MPPT_LLM_BASE_URL");
  const char* key = std::getenv("MPPT_LLM_API_KEY");
  if (key == nullptr || *key == '\0') spdlog::warn("MPPT_LLM_API_KEY is not set; requests go out unauthenticated");
  return std::make_unique<HttpBackend>(base != nullptr && *base != '\0' ? base : config.endpoint, key != nullptr ? key : "");
}

}  // namespace mppt::tscot
