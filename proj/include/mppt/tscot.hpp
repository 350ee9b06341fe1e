#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mppt/cache.hpp"
#include "mppt/common.hpp"
#include "mppt/corpus.hpp"
#include "mppt/llm_backend.hpp"

// Two-stage instruction chain: stage one asks the LLM for analysis
// perspectives on a target, stage two asks for a per-perspective explanation
// of one text, ending in a favor/against/none judgment.
namespace mppt::tscot {

inline constexpr int kMinGamma = 1;
inline constexpr int kMaxGamma = 16;

std::string build_s1(std::string_view target, int gamma);
std::string build_s2(std::string_view target, std::string_view text, std::string_view perspective);

// Appended to the stage-one instruction when too few items came back.
std::string recount_suffix(int gamma);

struct S1Slots {
  std::string target;
  int gamma = 0;
};
struct S2Slots {
  std::string target;
  std::string input;
  std::string perspective;
};
// Inverses of the builders (used by the mock backend); nullopt on mismatch.
std::optional<S1Slots> parse_s1(std::string_view instruction);
std::optional<S2Slots> parse_s2(std::string_view instruction);

// Pulls `gamma` items out of a numbered or bulleted list, dropping the
// numbering, any elaboration after a colon or spaced dash, and trailing
// punctuation. Throws CountMismatch or DuplicatePerspectives only.
std::vector<std::string> parse_perspectives(std::string_view response, int gamma);

struct ParsedExplanation {
  std::string text;
  std::optional<StanceLabel> judgment;
};

// Looks for favor/against/none (or pro/con/neutral) in the final two
// sentences and removes the sentence carrying the judgment. Throws
// EmptyExplanation only.
ParsedExplanation parse_explanation(std::string_view response);

struct PerspectiveSet {
  std::string target;
  int gamma = 0;
  std::vector<std::string> perspectives;
  std::vector<std::string> provenance;  // cache keys of the exchanges used

  nlohmann::json to_json() const;
  static PerspectiveSet from_json(const nlohmann::json& j);
};

struct Explanation {
  std::string example_id;
  int perspective_index = 0;
  std::string perspective;
  std::string text;
  std::optional<StanceLabel> llm_judgment;
  std::string provenance;
};

struct FailedCell {
  std::string example_id;
  int perspective_index = 0;
  std::string reason;
};

struct ExplanationRun {
  std::vector<Explanation> explanations;  // example order, then perspective order
  std::vector<FailedCell> failed;

  bool complete() const { return failed.empty(); }
};

// Backend + cache + config. query() is cache-first; on a miss it calls the
// backend with bounded retries and stores the exchange.
class CachedLlm {
 public:
  CachedLlm(LlmBackend& backend, const ResponseCache& cache, LlmBackendConfig config);

  CacheRecord query(const std::string& instruction) const;
  const LlmBackendConfig& config() const { return config_; }
  LlmBackend& backend() const { return backend_; }

 private:
  LlmBackend& backend_;
  const ResponseCache& cache_;
  LlmBackendConfig config_;
};

// One automatic re-prompt on CountMismatch, then the error propagates.
PerspectiveSet elicit_perspectives(std::string_view target, int gamma, const CachedLlm& llm);

// Perspective sets keyed by text::fold_key(target).
using PerspectiveIndex = std::map<std::string, PerspectiveSet>;
PerspectiveIndex index_perspectives(std::span<const PerspectiveSet> sets);

// Fills the |examples| x gamma grid. Cells whose request still fails after
// retries, or whose response is unusable, land in ExplanationRun::failed.
ExplanationRun generate_explanations(std::span<const corpus::Example> examples, const PerspectiveIndex& perspectives,
                                     const CachedLlm& llm, int parallelism);

// Columns: example_id, perspective_index, perspective, nle_text, llm_judgment.
void write_explanations(const std::filesystem::path& path, std::span<const Explanation> explanations);
std::vector<Explanation> read_explanations(const std::filesystem::path& path);

}  // namespace mppt::tscot
