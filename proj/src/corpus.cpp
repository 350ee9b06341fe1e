#include "mppt/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>
#include <unordered_set>

#include "mppt/delimited.hpp"
#include "mppt/text.hpp"
#include "mppt/util.hpp"

namespace mppt::corpus {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "TRAIN";
    case Split::Dev: return "DEV";
    case Split::Test: return "TEST";
  }
  return "TRAIN";
}

std::optional<Split> parse_split(std::string_view name) {
  const std::string lower = text::to_lower(name);
  if (lower == "train") return Split::Train;
  if (lower == "dev" || lower == "valid" || lower == "validation") return Split::Dev;
  if (lower == "test") return Split::Test;
  return std::nullopt;
}

std::string_view to_string(TaskMode mode) {
  return mode == TaskMode::CrossTarget ? "CROSS_TARGET" : "ZERO_SHOT";
}

std::optional<TaskMode> parse_task_mode(std::string_view name) {
  if (name == "CROSS_TARGET") return TaskMode::CrossTarget;
  if (name == "ZERO_SHOT") return TaskMode::ZeroShot;
  return std::nullopt;
}

namespace {

const std::map<char, std::string>& standard_targets() {
  static const std::map<char, std::string> targets = {
      {'D', "Donald Trump"},
      {'H', "Hillary Clinton"},
      {'L', "Legalization of Abortion"},
      {'F', "Feminist Movement"},
  };
  return targets;
}

char single_char_option(const json& j, const char* key, char fallback) {
  if (!j.contains(key)) return fallback;
  const auto value = j.at(key).get<std::string>();
  if (value.empty()) return '\0';
  if (value == "\\t" || value == "tab") return '\t';
  if (value.size() != 1) {
    throw Error(ErrorCode::InvalidConfig, std::string("manifest field '") + key + "' must be one character");
  }
  return value[0];
}

}  // namespace

const std::vector<std::string>& standard_task_names() {
  static const std::vector<std::string> names = {"F->L", "L->F", "H->D", "D->H"};
  return names;
}

std::optional<TaskSpec> find_standard_task(std::string_view name) {
  std::string compact(name);
  const std::string arrow = "→";
  if (auto pos = compact.find(arrow); pos != std::string::npos) compact.replace(pos, arrow.size(), "->");
  if (compact.size() != 4 || compact.substr(1, 2) != "->") return std::nullopt;
  const auto& targets = standard_targets();
  auto src = targets.find(compact[0]);
  auto dst = targets.find(compact[3]);
  if (src == targets.end() || dst == targets.end() || src == dst) return std::nullopt;
  return TaskSpec{compact, {src->second}, {dst->second}, TaskMode::CrossTarget};
}

DatasetManifest DatasetManifest::from_json(const json& j, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  try {
    const std::filesystem::path raw_path = j.at("path").get<std::string>();
    m.path = raw_path.is_absolute() ? raw_path : base_dir / raw_path;
    m.name = j.value("name", m.path.stem().string());
    m.delimiter = single_char_option(j, "delimiter", ',');
    m.quote = single_char_option(j, "quote", '"');
    m.has_header = j.value("has_header", true);

    const json& col = j.at("col");
    m.text_column = col.at("text").get<std::string>();
    m.target_column = col.at("target").get<std::string>();
    if (col.contains("label")) m.label_column = col.at("label").get<std::string>();
    if (col.contains("id")) m.id_column = col.at("id").get<std::string>();

    std::set<StanceLabel> seen;
    const json label_map = j.value("label_map", json::object());
    for (const auto& [native, canonical] : label_map.items()) {
      auto label = parse_canonical_label(canonical.get<std::string>());
      if (!label) throw Error(ErrorCode::InvalidConfig, "label_map target '" + canonical.get<std::string>() + "' is not FAVOR/AGAINST/NONE");
      if (!seen.insert(*label).second) {
        throw Error(ErrorCode::InvalidConfig, "label_map is not injective: two native labels map to " + std::string(to_string(*label)));
      }
      m.label_map.emplace(native, *label);
    }
    if (m.label_column && m.label_map.empty()) {
      throw Error(ErrorCode::InvalidConfig, "manifest has a label column but no label_map");
    }

    const json rule = j.value("split_rule", json{{"kind", "fixed"}, {"split", "TRAIN"}});
    const auto kind = rule.at("kind").get<std::string>();
    if (kind == "fixed") {
      m.split_rule.kind = SplitRule::Kind::Fixed;
      auto split = parse_split(rule.at("split").get<std::string>());
      if (!split) throw Error(ErrorCode::InvalidConfig, "unknown split in split_rule");
      m.split_rule.fixed = *split;
    } else if (kind == "column") {
      m.split_rule.kind = SplitRule::Kind::Column;
      m.split_rule.column = rule.at("column").get<std::string>();
      for (const auto& [native, name] : rule.at("values").items()) {
        auto split = parse_split(name.get<std::string>());
        if (!split) throw Error(ErrorCode::InvalidConfig, "unknown split '" + name.get<std::string>() + "'");
        m.split_rule.values.emplace(native, *split);
      }
    } else {
      throw Error(ErrorCode::InvalidConfig, "split_rule.kind must be 'fixed' or 'column'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, manifest_path.string() + ": " + e.what());
  }
  return from_json(j, manifest_path.parent_path());
}

std::optional<std::string> DatasetManifest::native_label(StanceLabel label) const {
  for (const auto& [native, canonical] : label_map) {
    if (canonical == label) return native;
  }
  return std::nullopt;
}

std::optional<StanceLabel> DatasetManifest::canonical_label(std::string_view native) const {
  auto it = label_map.find(std::string(native));
  if (it == label_map.end()) return std::nullopt;
  return it->second;
}

json LoadSummary::to_json() const {
  json rejected = json::array();
  for (const auto& r : rejections) {
    rejected.push_back({{"row", r.row}, {"line", r.line}, {"reason", to_string(r.reason)}, {"detail", r.detail}});
  }
  return {{"dataset", dataset}, {"rows_read", rows_read}, {"rows_kept", rows_kept}, {"rejections", rejected}};
}

LoadResult load_dataset(const DatasetManifest& manifest) {
  const std::string content = read_file(manifest.path);
  const auto records = parse_delimited(content, manifest.delimiter, manifest.quote);

  LoadResult result;
  result.summary.dataset = manifest.name;

  std::map<std::string, std::size_t> columns;
  std::size_t first_data = 0;
  if (manifest.has_header) {
    if (records.empty()) throw Error(ErrorCode::MissingColumn, manifest.path.string() + " has no header row");
    for (std::size_t c = 0; c < records[0].fields.size(); ++c) {
      columns.emplace(text::trim(records[0].fields[c]), c);
    }
    first_data = 1;
  }

  auto resolve = [&](const std::string& name) -> std::size_t {
    if (auto it = columns.find(name); it != columns.end()) return it->second;
    if (!manifest.has_header) {
      // Headerless files address columns by zero-based index.
      try {
        return static_cast<std::size_t>(std::stoul(name));
      } catch (const std::exception&) {
      }
    }
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in " + manifest.path.string());
  };

  const std::size_t text_col = resolve(manifest.text_column);
  const std::size_t target_col = resolve(manifest.target_column);
  const std::optional<std::size_t> label_col =
      manifest.label_column ? std::optional<std::size_t>(resolve(*manifest.label_column)) : std::nullopt;
  const std::optional<std::size_t> id_col =
      manifest.id_column ? std::optional<std::size_t>(resolve(*manifest.id_column)) : std::nullopt;
  const std::optional<std::size_t> split_col =
      manifest.split_rule.kind == SplitRule::Kind::Column
          ? std::optional<std::size_t>(resolve(manifest.split_rule.column))
          : std::nullopt;

  std::unordered_set<std::string> ids;
  for (std::size_t r = first_data; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t row = r - first_data + 1;
    ++result.summary.rows_read;
    auto reject = [&](ErrorCode reason, std::string detail) {
      result.summary.rejections.push_back({row, rec.line, reason, std::move(detail)});
    };
    auto field = [&](std::size_t c) -> std::string { return c < rec.fields.size() ? rec.fields[c] : std::string(); };

    Example ex;
    ex.text = text::normalize(field(text_col));
    ex.target = text::normalize(field(target_col));
    if (ex.text.empty()) {
      reject(ErrorCode::EmptyField, "blank text");
      continue;
    }
    if (ex.target.empty()) {
      reject(ErrorCode::EmptyField, "blank target");
      continue;
    }
    if (label_col) {
      const std::string native = text::trim(field(*label_col));
      auto label = manifest.canonical_label(native);
      if (!label) {
        reject(ErrorCode::UnknownLabel, "label '" + native + "' not in label_map");
        continue;
      }
      ex.label = *label;
    }
    if (split_col) {
      const std::string native = text::trim(field(*split_col));
      auto it = manifest.split_rule.values.find(native);
      if (it == manifest.split_rule.values.end()) {
        reject(ErrorCode::InvalidConfig, "split value '" + native + "' not in split_rule.values");
        continue;
      }
      ex.split = it->second;
    } else {
      ex.split = manifest.split_rule.fixed;
    }
    ex.id = id_col ? text::trim(field(*id_col)) : manifest.name + ":" + std::to_string(row);
    if (ex.id.empty()) {
      reject(ErrorCode::EmptyField, "blank id");
      continue;
    }
    if (!ids.insert(ex.id).second) {
      reject(ErrorCode::DuplicateId, "id '" + ex.id + "' already seen");
      continue;
    }
    result.examples.push_back(std::move(ex));
  }
  result.summary.rows_kept = result.examples.size();
  if (!result.summary.rejections.empty()) {
    spdlog::warn("{}: kept {} of {} rows ({} rejected)", manifest.name, result.summary.rows_kept,
                 result.summary.rows_read, result.summary.rejections.size());
  }
  return result;
}

TaskPartition build_task(std::span<const Example> examples, const TaskSpec& spec) {
  TaskPartition part;
  std::set<std::string> source;
  std::set<std::string> dest;
  for (const auto& t : spec.source_targets) source.insert(text::fold_key(t));
  for (const auto& t : spec.dest_targets) dest.insert(text::fold_key(t));

  if (spec.mode == TaskMode::CrossTarget) {
    for (const auto& t : source) {
      if (dest.count(t)) throw Error(ErrorCode::TargetLeak, "target '" + t + "' is both source and destination");
    }
    for (const auto& ex : examples) {
      const std::string key = text::fold_key(ex.target);
      if (source.count(key)) {
        if (!ex.label) throw Error(ErrorCode::Unlabeled, "source example '" + ex.id + "' has no label");
        part.train.push_back(ex);
      } else if (dest.count(key)) {
        part.eval.push_back(ex);
      }
    }
  } else {
    std::set<std::string> train_topics;
    for (const auto& ex : examples) {
      const std::string key = text::fold_key(ex.target);
      switch (ex.split) {
        case Split::Train:
          if (!source.empty() && !source.count(key)) break;
          if (!ex.label) throw Error(ErrorCode::Unlabeled, "train example '" + ex.id + "' has no label");
          part.train.push_back(ex);
          train_topics.insert(key);
          break;
        case Split::Dev:
          part.dev.push_back(ex);
          break;
        case Split::Test:
          if (!dest.empty() && !dest.count(key)) break;
          part.eval.push_back(ex);
          break;
      }
    }
    for (const auto& ex : part.eval) {
      if (train_topics.count(text::fold_key(ex.target))) {
        throw Error(ErrorCode::TargetLeak, "eval topic '" + ex.target + "' occurs in train");
      }
    }
  }
  if (part.train.empty()) throw Error(ErrorCode::EmptyPartition, "task '" + spec.name + "' has an empty train partition");
  if (part.eval.empty()) throw Error(ErrorCode::EmptyPartition, "task '" + spec.name + "' has an empty eval partition");
  return part;
}

json EvalReport::to_json() const {
  json counts_json = json::array();
  for (const auto& row : counts) counts_json.push_back(row);
  return {{"per_class_f1",
           {{"FAVOR", per_class_f1[0]}, {"AGAINST", per_class_f1[1]}, {"NONE", per_class_f1[2]}}},
          {"macro_favor_against", macro_favor_against},
          {"macro_all", macro_all},
          {"counts", counts_json}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  for (auto label : kAllLabels) r.per_class_f1[index_of(label)] = j.at("per_class_f1").at(std::string(to_string(label))).get<double>();
  r.macro_favor_against = j.at("macro_favor_against").get<double>();
  r.macro_all = j.at("macro_all").get<double>();
  for (std::size_t g = 0; g < kNumLabels; ++g) {
    for (std::size_t p = 0; p < kNumLabels; ++p) r.counts[g][p] = j.at("counts").at(g).at(p).get<std::size_t>();
  }
  return r;
}

EvalReport evaluate(std::span<const StanceLabel> gold, std::span<const StanceLabel> pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(gold.size()) + " gold vs " + std::to_string(pred.size()) + " predicted");
  }
  if (gold.empty()) throw Error(ErrorCode::EmptyInput, "nothing to evaluate");

  EvalReport report;
  for (std::size_t i = 0; i < gold.size(); ++i) ++report.counts[index_of(gold[i])][index_of(pred[i])];

  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const double tp = static_cast<double>(report.counts[c][c]);
    double predicted = 0.0;
    double actual = 0.0;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      predicted += static_cast<double>(report.counts[k][c]);
      actual += static_cast<double>(report.counts[c][k]);
    }
    const double precision = predicted > 0.0 ? tp / predicted : 0.0;
    const double recall = actual > 0.0 ? tp / actual : 0.0;
    report.per_class_f1[c] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  report.macro_favor_against = (report.per_class_f1[0] + report.per_class_f1[1]) / 2.0;
  report.macro_all = (report.per_class_f1[0] + report.per_class_f1[1] + report.per_class_f1[2]) / 3.0;
  return report;
}

}  // namespace mppt::corpus
