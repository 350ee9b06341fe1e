#include <spdlog/spdlog.h>

#include <map>
#include <set>

#include "mppt/harness.hpp"
#include "mppt/util.hpp"

namespace mppt::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMissing = "—";

const std::array<Ablation, 3> kRows = {Ablation::None, Ablation::NoTscot, Ablation::NoSenticnet};

std::string_view row_label(Ablation a) {
  switch (a) {
    case Ablation::None: return "MPPT";
    case Ablation::NoTscot: return "- w/o T";
    case Ablation::NoSenticnet: return "- w/o S";
  }
  return "";
}

std::string pct(std::optional<double> v) { return v ? fmt::format("{:.1f}", 100.0 * *v) : std::string(kMissing); }

std::string canonical_task(const RunResult& r) {
  if (!r.config.source_targets.empty() || r.config.mode == corpus::TaskMode::ZeroShot) return r.config.task;
  const auto spec = corpus::find_standard_task(r.config.task);
  return spec ? spec->name : r.config.task;
}

// Mean of f over the results matching (task, ablation); nullopt when none.
template <typename F>
std::optional<double> mean_of(const std::vector<RunResult>& results, const std::string& task, Ablation a, F&& f) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : results) {
    if (canonical_task(r) != task || r.config.ablation != a) continue;
    const std::optional<double> v = f(r);
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

void table(std::string& out, const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  auto line = [&](const std::vector<std::string>& cells) {
    out += "|";
    for (const auto& c : cells) out += " " + c + " |";
    out += "\n";
  };
  line(header);
  out += "|";
  for (std::size_t i = 0; i < header.size(); ++i) out += i == 0 ? "---|" : "---:|";
  out += "\n";
  for (const auto& r : rows) line(r);
  out += "\n";
}

}  // namespace

std::string render_tables(const std::vector<RunResult>& results) {
  std::string out = "# Results\n\n";

  // Cross-target tasks, one column each: the four standard tasks whenever
  // any of them ran, then custom tasks in order of appearance.
  const auto& standard = corpus::standard_task_names();
  std::vector<std::string> columns;
  std::vector<std::string> headers;
  const bool any_standard = std::any_of(results.begin(), results.end(), [&](const RunResult& r) {
    return std::find(standard.begin(), standard.end(), canonical_task(r)) != standard.end();
  });
  if (any_standard) {
    columns = standard;
    headers = {"F→L", "L→F", "H→D", "D→H"};
  }
  for (const auto& r : results) {
    const std::string t = canonical_task(r);
    if (r.config.mode != corpus::TaskMode::CrossTarget || std::find(columns.begin(), columns.end(), t) != columns.end()) continue;
    columns.push_back(t);
    headers.push_back(t);
  }
  if (!columns.empty()) {
    out += "## Cross-target (macro F1 over FAVOR and AGAINST, %)\n\n";
    std::vector<std::vector<std::string>> rows;
    for (Ablation a : kRows) {
      std::vector<std::string> row = {std::string(row_label(a))};
      for (const auto& t : columns) row.push_back(pct(mean_of(results, t, a, [](const RunResult& r) { return std::optional(r.metric()); })));
      rows.push_back(std::move(row));
    }
    headers.insert(headers.begin(), "Method");
    table(out, headers, rows);
  }

  // Zero-shot tasks: Con = F1(AGAINST), Pro = F1(FAVOR), All = 3-class macro.
  std::set<std::string> zs_tasks;
  for (const auto& r : results) {
    if (r.config.mode == corpus::TaskMode::ZeroShot) zs_tasks.insert(canonical_task(r));
  }
  for (const auto& task : zs_tasks) {
    out += "## Zero-shot: " + task + " (F1, %)\n\n";
    std::vector<std::vector<std::string>> rows;
    for (Ablation a : kRows) {
      rows.push_back({std::string(row_label(a)),
                      pct(mean_of(results, task, a, [](const RunResult& r) { return std::optional(r.report.per_class_f1[1]); })),
                      pct(mean_of(results, task, a, [](const RunResult& r) { return std::optional(r.report.per_class_f1[0]); })),
                      pct(mean_of(results, task, a, [](const RunResult& r) { return std::optional(r.report.macro_all); }))});
    }
    table(out, {"Method", "Con", "Pro", "All"}, rows);
  }

  out += "## Runs\n\n";
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : results) {
    const auto& c = r.config;
    rows.push_back({c.run_name(), canonical_task(r), std::to_string(c.gamma), std::string(to_string(c.ablation)), std::to_string(c.seed),
                    pct(r.metric()), pct(r.train_report ? std::optional(r.train_report->macro_favor_against) : std::nullopt), pct(r.dev_metric),
                    pct(r.llm_judgment_report ? std::optional(primary_metric(*r.llm_judgment_report, c.mode)) : std::nullopt),
                    std::to_string(r.curve.empty() ? 0 : r.curve.back().step), fmt::format("{:.1f}", r.wall_time_s)});
  }
  table(out,
        {"Run", "Task", "γ", "Ablation", "Seed", "Eval", "Train F/A", "Dev", "LLM judgment only (diagnostic)", "Steps", "Wall (s)"},
        rows);

  // γ series wherever one (task, ablation, seed) has more than one γ.
  std::map<std::tuple<std::string, Ablation, std::uint64_t>, std::map<int, double>> series;
  for (const auto& r : results) series[{canonical_task(r), r.config.ablation, r.config.seed}][r.config.gamma] = r.metric();
  for (const auto& [key, points] : series) {
    if (points.size() < 2) continue;
    const auto& [task, a, seed] = key;
    out += "## γ sweep: " + task + ", " + std::string(row_label(a)) + ", seed " + std::to_string(seed) + "\n\n";
    std::vector<std::vector<std::string>> srows;
    for (const auto& [g, m] : points) srows.push_back({std::to_string(g), pct(m)});
    table(out, {"γ", "Metric"}, srows);
  }

  out += "## Published reference scores (full-scale backbone and LLM)\n\n";
  table(out, {"Method", "F→L", "L→F", "H→D", "D→H"},
        {{"MPPT", "67.4", "66.9", "67.2", "73.5"}, {"- w/o T", "—", "—", "—", "53.1"}, {"- w/o S", "—", "—", "—", "70.8"}});
  table(out, {"Method (VAST)", "Con", "Pro", "All"}, {{"MPPT", "69.2", "67.6", "74.4"}});
  return out;
}

void write_report(const std::vector<RunResult>& results, const fs::path& dir) {
  if (results.empty()) throw Error(ErrorCode::EmptyInput, "report needs at least one result");
  fs::create_directories(dir);
  write_file_atomic(dir / "tables.md", render_tables(results));

  json all = json::array();
  for (const auto& r : results) all.push_back(r.to_json());
  write_file_atomic(dir / "results.json", all.dump(2) + "\n");

  std::string gamma = "task\tablation\tseed\tgamma\tmetric\n";
  for (const auto& r : results) {
    gamma += fmt::format("{}\t{}\t{}\t{}\t{:.6f}\n", canonical_task(r), to_string(r.config.ablation), r.config.seed, r.config.gamma, r.metric());
  }
  write_file_atomic(dir / "gamma_curve.tsv", gamma);

  std::string curves = "run\tstep\tloss\n";
  for (const auto& r : results) {
    for (const auto& p : r.curve) curves += fmt::format("{}\t{}\t{:.9g}\n", r.config.run_name(), p.step, p.loss);
  }
  write_file_atomic(dir / "training_curves.tsv", curves);
  spdlog::info("report written to {}", dir.string());
}

}  // namespace mppt::harness
