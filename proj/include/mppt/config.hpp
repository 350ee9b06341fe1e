#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mppt/corpus.hpp"
#include "mppt/llm_backend.hpp"
#include "mppt/model.hpp"

namespace mppt::harness {

enum class Ablation : std::uint8_t { None, NoTscot, NoSenticnet };
std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view s);  // NONE | NO_TSCOT | NO_SENTICNET

enum class SweepMode : std::uint8_t { Fresh, Prefix };
std::string_view to_string(SweepMode m);
SweepMode parse_sweep_mode(std::string_view s);

struct OptimizerConfig {
  std::string name = "AdamW";
  double lr = 2e-5;
  int batch_size = 32;
  int epochs = 10;
  int max_steps = 0;  // 0: no cap
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;
};

struct PathsConfig {
  std::vector<std::filesystem::path> data;  // dataset manifests
  std::filesystem::path cache = "cache/llm";
  std::filesystem::path nle_corpus = "nle";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path reports = "reports";
};

struct VerbalizerConfig {
  std::filesystem::path lexicon;  // empty: no expansion possible
  int expansion_limit = 4;
};

struct RunConfig {
  std::string task = "D->H";                    // standard name, or a label for the explicit fields below
  std::vector<std::string> source_targets;      // explicit task when non-empty
  std::vector<std::string> dest_targets;
  corpus::TaskMode mode = corpus::TaskMode::CrossTarget;
  int gamma = 4;
  Ablation ablation = Ablation::None;
  std::uint64_t seed = 42;
  OptimizerConfig optimizer;
  std::filesystem::path backbone;  // masked-LM directory
  std::string backbone_id;         // recorded identity; defaults to the directory name
  PathsConfig paths;
  tscot::LlmBackendConfig llm;
  int llm_parallelism = 4;
  multipln::ModelOptions model;
  VerbalizerConfig verbalizer;
  std::size_t threads = 1;
  SweepMode sweep_mode = SweepMode::Fresh;
  int sweep_max_gamma = 8;  // elicitation size under SweepMode::Prefix
  bool evaluate_train = true;

  // Ablation rules applied: NO_TSCOT -> gamma 1, NO_SENTICNET -> no expansion.
  RunConfig effective() const;
  // Throws InvalidConfig.
  void validate() const;
  corpus::TaskSpec task_spec() const;
  // Stable directory name for checkpoints and reports.
  std::string run_name() const;

  nlohmann::json to_json() const;
  // Relative paths resolve against base_dir.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace mppt::harness
