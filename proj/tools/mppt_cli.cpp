#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "mppt/backbone.hpp"
#include "mppt/harness.hpp"
#include "mppt/pretrain.hpp"
#include "mppt/synthetic.hpp"
#include "mppt/tscot.hpp"
#include "mppt/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mppt;
using namespace mppt::harness;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string cache_dir;
  std::string mock_llm;
  std::optional<int> gamma;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> epochs;
  std::optional<int> max_steps;
  std::optional<std::size_t> threads;
  std::string ablation;
  std::string backbone;
  bool verbose = false;
};

RunConfig load_config(const Overrides& o) {
  if (o.config.empty()) throw Error(ErrorCode::InvalidConfig, "--config is required");
  RunConfig c = RunConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.cache_dir.empty()) c.paths.cache = o.cache_dir;
  if (!o.mock_llm.empty()) {
    c.llm.endpoint = std::string(tscot::kMockEndpoint);
    c.llm.fixtures_dir = o.mock_llm;
  }
  if (o.gamma) c.gamma = *o.gamma;
  if (o.lr) c.optimizer.lr = *o.lr;
  if (o.batch_size) c.optimizer.batch_size = *o.batch_size;
  if (o.epochs) c.optimizer.epochs = *o.epochs;
  if (o.max_steps) c.optimizer.max_steps = *o.max_steps;
  if (o.threads) c.threads = *o.threads;
  if (!o.ablation.empty()) c.ablation = parse_ablation(o.ablation);
  if (!o.backbone.empty()) c.backbone = o.backbone;
  c.validate();
  return c;
}

std::string task_slug(const RunConfig& c) {
  const std::string name = c.run_name();
  return name.substr(0, name.find('_'));
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<RunResult> read_results(const std::vector<std::string>& files) {
  std::vector<RunResult> out;
  for (const auto& f : files) {
    const json j = json::parse(read_file(f));
    if (j.is_array()) {
      for (const auto& r : j) out.push_back(RunResult::from_json(r));
    } else {
      out.push_back(RunResult::from_json(j));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-perspective prompt-tuning stance detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "Run config (JSON)");
  app.add_option("--seed", o.seed, "Seed for data order, query init and dropout");
  app.add_option("--cache-dir", o.cache_dir, "LLM response cache directory");
  app.add_option("--mock-llm", o.mock_llm, "Use the MOCK backend with this fixtures directory");
  app.add_option("--gamma", o.gamma, "Perspectives per target");
  app.add_option("--lr", o.lr, "Learning rate");
  app.add_option("--batch-size", o.batch_size, "Mini-batch size");
  app.add_option("--epochs", o.epochs, "Training epochs");
  app.add_option("--max-steps", o.max_steps, "Cap on optimizer steps (0: none)");
  app.add_option("--threads", o.threads, "Worker threads for training and evaluation");
  app.add_option("--ablation", o.ablation, "NONE, NO_TSCOT or NO_SENTICNET");
  app.add_option("--backbone", o.backbone, "Masked-LM backbone directory");
  app.add_flag("-v,--verbose", o.verbose, "Debug logging");

  auto* elicit = app.add_subcommand("elicit", "Elicit perspectives for every task target");
  auto* explain = app.add_subcommand("explain", "Build the NLE corpus (perspectives + explanations)");
  auto* train_cmd = app.add_subcommand("train", "Fine-tune and evaluate one run");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  auto* ablate = app.add_subcommand("ablate", "Run NONE, NO_TSCOT and NO_SENTICNET");
  auto* sweep = app.add_subcommand("sweep", "Sweep gamma over an interval");
  int sweep_from = 2, sweep_to = 8;
  sweep->add_option("--from", sweep_from, "Smallest gamma");
  sweep->add_option("--to", sweep_to, "Largest gamma");
  auto* report_cmd = app.add_subcommand("report", "Render tables from result files");
  std::vector<std::string> result_files;
  std::string report_out = "report";
  report_cmd->add_option("results", result_files, "result.json or results.json files")->required();
  report_cmd->add_option("--out", report_out, "Output directory");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Pretrain a compact masked-LM backbone on the synthetic corpus");
  std::string pretrain_out;
  std::size_t sentences = 6000;
  PretrainOptions po;
  po.arch.hidden_size = 64;
  po.arch.num_layers = 2;
  po.arch.num_heads = 4;
  po.arch.intermediate_size = 128;
  po.arch.max_position_embeddings = 128;
  pretrain_cmd->add_option("--out", pretrain_out, "Backbone output directory")->required();
  pretrain_cmd->add_option("--sentences", sentences, "Corpus size");
  pretrain_cmd->add_option("--steps", po.steps, "Optimizer steps");
  pretrain_cmd->add_option("--hidden", po.arch.hidden_size, "Hidden size");
  pretrain_cmd->add_option("--layers", po.arch.num_layers, "Encoder layers");
  pretrain_cmd->add_option("--heads", po.arch.num_heads, "Attention heads");
  pretrain_cmd->add_option("--ffn", po.arch.intermediate_size, "Feed-forward size");
  pretrain_cmd->add_option("--pretrain-lr", po.lr, "Peak learning rate");
  pretrain_cmd->add_option("--vocab", po.vocab_limit, "Vocabulary size limit");

  auto* synth = app.add_subcommand("synth", "Write the synthetic cross-target task, MOCK rules and a run config");
  std::string synth_out;
  std::string synth_backbone;
  std::size_t per_target = 32;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--backbone-dir", synth_backbone, "Backbone referenced by the written config");
  synth->add_option("--per-target", per_target, "Examples per target");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*pretrain_cmd) {
      po.seed = o.seed.value_or(0);
      po.threads = o.threads.value_or(1);
      const auto corpus = synthetic::pretraining_corpus(sentences, po.seed);
      std::vector<std::string> required;
      for (const auto* w : {"favor", "against", "none", "happily", "pleased", "agree", "affirmative", "oppose", "disagree", "reject",
                            "hostile", "neutral", "neither", "nothing", "indifferent"}) {
        required.emplace_back(w);
      }
      auto result = pretrain_mlm(corpus, required, po);
      save_backbone(pretrain_out, result.backbone);
      std::string curve = "step\tloss\n";
      for (std::size_t i = 0; i < result.losses.size(); ++i) curve += std::to_string(i + 1) + "\t" + std::to_string(result.losses[i]) + "\n";
      write_file_atomic(fs::path(pretrain_out) / "pretrain_curve.tsv", curve);
      print({{"backbone", pretrain_out}, {"parameters", result.backbone.config.parameter_count()}, {"final_loss", result.losses.back()}});
      return 0;
    }
    if (*synth) {
      synthetic::TaskOptions opts;
      opts.per_target = per_target;
      opts.seed = o.seed.value_or(0);
      const auto files = synthetic::write_task(synth_out, opts);
      RunConfig c;
      c.task = "synthetic";
      c.source_targets = {opts.source_target};
      c.dest_targets = {opts.dest_target};
      c.paths.data = {fs::relative(files.manifest, synth_out)};
      c.backbone = synth_backbone.empty() ? fs::path("backbone") : fs::absolute(synth_backbone);
      c.llm.endpoint = std::string(tscot::kMockEndpoint);
      c.llm.fixtures_dir = fs::relative(files.mock_llm, synth_out);
      c.verbalizer.expansion_limit = 0;
      c.optimizer.epochs = 200;
      c.optimizer.max_steps = 200;
      c.seed = opts.seed;
      json j = c.to_json();
      j["paths"]["cache"] = "cache/llm";
      j["paths"]["nle_corpus"] = "nle";
      j["paths"]["checkpoints"] = "checkpoints";
      j["paths"]["reports"] = "reports";
      write_file_atomic(fs::path(synth_out) / "config.json", j.dump(2) + "\n");
      print({{"manifest", files.manifest.string()}, {"mock_llm", files.mock_llm.string()}, {"config", (fs::path(synth_out) / "config.json").string()}});
      return 0;
    }
    if (*report_cmd) {
      write_report(read_results(result_files), report_out);
      return 0;
    }

    const RunConfig c = load_config(o);
    if (*elicit) {
      const RunConfig e = c.effective();
      if (e.ablation == Ablation::NoTscot) {
        spdlog::info("NO_TSCOT: nothing to elicit");
        return 0;
      }
      auto backend = tscot::make_backend(e.llm);
      const tscot::ResponseCache cache(e.paths.cache);
      const tscot::CachedLlm llm(*backend, cache, e.llm);
      const auto data = load_task(e);
      json out = json::array();
      std::set<std::string> seen;
      for (const auto* part : {&data.partition.train, &data.partition.dev, &data.partition.eval}) {
        for (const auto& ex : *part) {
          if (seen.insert(ex.target).second) out.push_back(tscot::elicit_perspectives(ex.target, e.gamma, llm).to_json());
        }
      }
      print(out);
      spdlog::info("{} backend requests", backend->request_count());
      return 0;
    }
    if (*explain) {
      const auto dir = prepare_nles(c);
      print({{"nle_corpus", dir ? json(dir->string()) : json(nullptr)}});
      return 0;
    }
    if (*train_cmd) {
      const RunResult r = train(c);
      write_report({r}, c.paths.reports / c.run_name());
      print({{"run", c.run_name()}, {"metric", r.metric()}, {"checkpoint", r.checkpoint.string()}});
      return 0;
    }
    if (*eval_cmd) {
      const auto report = evaluate_run(checkpoint, c);
      print(report.to_json());
      return 0;
    }
    if (*ablate) {
      const auto results = run_ablations(c);
      write_report(results, c.paths.reports / ("ablations_" + task_slug(c) + "_s" + std::to_string(c.seed)));
      return 0;
    }
    if (*sweep) {
      const auto s = gamma_sweep(c, sweep_from, sweep_to);
      write_report(s.results, c.paths.reports / ("sweep_" + task_slug(c) + "_s" + std::to_string(c.seed)));
      json series = json::array();
      for (const auto& [g, m] : s.series) series.push_back({g, m});
      print(series);
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{}: {}", to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
