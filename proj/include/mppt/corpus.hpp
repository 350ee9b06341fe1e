#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mppt/common.hpp"

namespace mppt::corpus {

enum class Split : std::uint8_t { Train, Dev, Test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view name);

struct Example {
  std::string id;
  std::string text;
  std::string target;
  std::optional<StanceLabel> label;
  Split split = Split::Train;
};

enum class TaskMode : std::uint8_t { CrossTarget, ZeroShot };

std::string_view to_string(TaskMode mode);
std::optional<TaskMode> parse_task_mode(std::string_view name);

struct TaskSpec {
  std::string name;
  std::vector<std::string> source_targets;
  std::vector<std::string> dest_targets;
  TaskMode mode = TaskMode::CrossTarget;
};

// F->L, L->F, H->D, D->H over the SemEval-2016 targets. Both "->" and the
// arrow character are accepted.
std::optional<TaskSpec> find_standard_task(std::string_view name);
const std::vector<std::string>& standard_task_names();

struct TaskPartition {
  std::vector<Example> train;
  std::vector<Example> dev;  // empty for cross-target tasks
  std::vector<Example> eval;
};

struct SplitRule {
  enum class Kind { Fixed, Column };
  Kind kind = Kind::Fixed;
  Split fixed = Split::Train;
  std::string column;
  std::map<std::string, Split> values;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path path;  // resolved against the manifest's directory
  char delimiter = ',';
  char quote = '"';
  bool has_header = true;
  std::string text_column;
  std::string target_column;
  std::optional<std::string> label_column;  // absent: unlabeled inference data
  std::optional<std::string> id_column;     // absent: ids are "<name>:<row>"
  std::map<std::string, StanceLabel> label_map;
  SplitRule split_rule;

  static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static DatasetManifest load(const std::filesystem::path& manifest_path);

  // Reverse of label_map; defined because label_map must be injective.
  std::optional<std::string> native_label(StanceLabel label) const;
  std::optional<StanceLabel> canonical_label(std::string_view native) const;
};

struct Rejection {
  std::size_t row = 0;   // 1-based data row
  std::size_t line = 0;  // 1-based physical line
  ErrorCode reason = ErrorCode::EmptyField;
  std::string detail;
};

struct LoadSummary {
  std::string dataset;
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::vector<Rejection> rejections;

  nlohmann::json to_json() const;
};

struct LoadResult {
  std::vector<Example> examples;
  LoadSummary summary;
};

// Throws MissingColumn for manifest columns absent from the header. Row-level
// problems (UnknownLabel, EmptyField, DuplicateId) are recorded, not thrown.
LoadResult load_dataset(const DatasetManifest& manifest);

// Cross-target: train = examples on source targets, eval = examples on
// destination targets. Zero-shot: native splits are respected and no eval
// topic may occur in train. Target comparison uses text::fold_key.
TaskPartition build_task(std::span<const Example> examples, const TaskSpec& spec);

struct EvalReport {
  std::array<double, kNumLabels> per_class_f1{};
  double macro_favor_against = 0.0;
  double macro_all = 0.0;
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};  // [gold][pred]

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate(std::span<const StanceLabel> gold, std::span<const StanceLabel> pred);

}  // namespace mppt::corpus
