#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mppt/config.hpp"
#include "mppt/corpus.hpp"
#include "mppt/llm_backend.hpp"
#include "mppt/tscot.hpp"

namespace mppt::harness {

struct CurvePoint {
  int step = 0;
  double loss = 0.0;
};

struct Provenance {
  std::string backbone_sha256;
  std::string checkpoint_sha256;
  std::string nle_corpus_sha256;  // empty under NO_TSCOT
  std::string nle_corpus_path;
};

struct RunResult {
  RunConfig config;  // effective config
  corpus::EvalReport report;
  std::optional<corpus::EvalReport> train_report;
  std::optional<double> dev_metric;  // best dev score when a dev split exists
  std::optional<corpus::EvalReport> llm_judgment_report;  // diagnostic only
  std::vector<CurvePoint> curve;
  double wall_time_s = 0.0;
  Provenance provenance;
  std::filesystem::path checkpoint;

  // Task-appropriate headline: FAVOR/AGAINST macro for cross-target, all
  // three classes for zero-shot.
  double metric() const;
  nlohmann::json to_json() const;
  static RunResult from_json(const nlohmann::json& j);
};

double primary_metric(const corpus::EvalReport& report, corpus::TaskMode mode);

// Injection points for tests and the CLI.
struct Environment {
  // Backend factory; defaults to tscot::make_backend.
  std::function<std::unique_ptr<tscot::LlmBackend>(const tscot::LlmBackendConfig&)> make_backend;
  // Receives every backend created, for call accounting.
  std::function<void(const tscot::LlmBackend&)> on_backend_done;
};

struct TaskData {
  corpus::TaskSpec spec;
  corpus::TaskPartition partition;
};

TaskData load_task(const RunConfig& config);

// Location of the NLE corpus for a config (independent of ablation and seed).
std::filesystem::path nle_corpus_dir(const RunConfig& config);

// Elicits perspectives and explanations for every train, dev and eval
// example, writes explanations.tsv, perspectives.json and manifest.json, and
// returns the corpus directory. Returns nullopt under NO_TSCOT without
// creating a backend. Throws PartialCompletion after writing the cells that
// did complete.
std::optional<std::filesystem::path> prepare_nles(const RunConfig& config, const Environment& env = {});

// Loads a prepared corpus, verifying the manifest (StaleCorpus otherwise).
std::vector<tscot::Explanation> load_nle_corpus(const std::filesystem::path& dir, const RunConfig& config);

// Fine-tunes on the source partition and evaluates on the eval partition.
RunResult train(const RunConfig& config, const Environment& env = {});

// Evaluates a saved checkpoint on the eval partition; writes predictions.tsv
// into the run's report directory.
corpus::EvalReport evaluate_run(const std::filesystem::path& checkpoint, const RunConfig& config);

// NONE, NO_TSCOT, NO_SENTICNET with a shared seed and data.
std::vector<RunResult> run_ablations(const RunConfig& base, const Environment& env = {});

struct SweepResult {
  std::vector<RunResult> results;
  std::vector<std::pair<int, double>> series;  // (gamma, metric)
};
SweepResult gamma_sweep(const RunConfig& base, int gamma_lo, int gamma_hi, const Environment& env = {});

// tables.md, results.json, gamma_curve.tsv, training_curves.tsv.
void write_report(const std::vector<RunResult>& results, const std::filesystem::path& dir);
std::string render_tables(const std::vector<RunResult>& results);

struct BootstrapResult {
  double delta = 0.0;    // metric(b) - metric(a) on the full sample
  double p_value = 0.0;  // share of resamples with delta <= 0
  std::size_t resamples = 0;
};
// Paired bootstrap over examples for a metric on (gold, pred) pairs.
BootstrapResult paired_bootstrap(std::span<const StanceLabel> gold, std::span<const StanceLabel> pred_a,
                                 std::span<const StanceLabel> pred_b, corpus::TaskMode mode, std::size_t resamples,
                                 std::uint64_t seed);

}  // namespace mppt::harness

namespace mppt::harness {

// Process exit status for an error: 2 validation, 3 backend, 4 partial
// completion, 1 anything else.
int exit_code_for(ErrorCode code);

}  // namespace mppt::harness
