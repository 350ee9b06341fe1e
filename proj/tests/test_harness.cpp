#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mppt/backbone.hpp"
#include "mppt/harness.hpp"
#include "mppt/safetensors.hpp"
#include "mppt/synthetic.hpp"
#include "mppt/tscot.hpp"
#include "mppt/util.hpp"
#include "test_support.hpp"

using namespace mppt;
using namespace mppt::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mppt_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Counts backend construction and requests across a run.
struct CallCounter {
  std::size_t backends = 0;
  std::size_t requests = 0;
  Environment env() {
    Environment e;
    e.make_backend = [this](const tscot::LlmBackendConfig& c) -> std::unique_ptr<tscot::LlmBackend> {
      ++backends;
      return std::make_unique<tscot::MockBackend>(c.fixtures_dir);
    };
    e.on_backend_done = [this](const tscot::LlmBackend& b) { requests += b.request_count(); };
    return e;
  }
};

// Synthetic task with 6 examples per target and a tiny random backbone.
RunConfig small_setup(const std::string& name, double dropout = 0.1, std::size_t per_target = 6) {
  const fs::path dir = fresh_dir(name);
  synthetic::TaskOptions opts;
  opts.per_target = per_target;
  const auto files = synthetic::write_task(dir, opts);
  Backbone bb = testing::tiny_backbone(11, synthetic::pretraining_corpus(300, 1));
  bb.config.hidden_dropout = dropout;
  save_backbone(dir / "backbone", bb);

  RunConfig c;
  c.task = "synthetic";
  c.source_targets = {opts.source_target};
  c.dest_targets = {opts.dest_target};
  c.gamma = 2;
  c.seed = 5;
  c.backbone = dir / "backbone";
  c.paths.data = {files.manifest};
  c.paths.cache = dir / "cache";
  c.paths.nle_corpus = dir / "nle";
  c.paths.checkpoints = dir / "checkpoints";
  c.paths.reports = dir / "reports";
  c.llm.endpoint = std::string(tscot::kMockEndpoint);
  c.llm.fixtures_dir = files.mock_llm;
  c.llm.retry_backoff = std::chrono::milliseconds(0);
  c.verbalizer.lexicon = fs::path(MPPT_SOURCE_DIR) / "data/lexicon/senticnet_extract.tsv";
  c.optimizer.lr = 1e-3;
  c.optimizer.batch_size = 4;
  c.optimizer.epochs = 1;
  c.optimizer.max_steps = 0;
  return c;
}

std::size_t tsv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n - 1;
}

void check_same_curve(const RunResult& a, const RunResult& b) {
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].step == b.curve[i].step);
    CHECK(std::abs(a.curve[i].loss - b.curve[i].loss) <= 1e-6);
  }
}

}  // namespace

TEST_CASE("run config: json round trip, ablation rules and validation") {
  RunConfig c = small_setup("config");
  c.ablation = Ablation::NoSenticnet;
  c.gamma = 6;
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  CHECK(c.effective().verbalizer.expansion_limit == 0);
  CHECK(c.effective().gamma == 6);
  c.ablation = Ablation::NoTscot;
  CHECK(c.effective().gamma == 1);
  CHECK(c.effective().verbalizer.expansion_limit == 4);
  CHECK(c.run_name() == "synthetic_g1_no-tscot_s5");

  json bad = c.to_json();
  bad["learning_rate"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(bad), Error);
  RunConfig g = c;
  g.ablation = Ablation::None;
  g.gamma = 0;
  CHECK_THROWS_AS(g.validate(), Error);
  RunConfig t = small_setup("config_task");
  t.source_targets.clear();
  t.dest_targets.clear();
  t.task = "X->Y";
  CHECK_THROWS_AS(t.validate(), Error);
  t.task = "D→H";
  CHECK_NOTHROW(t.validate());
  CHECK(t.task_spec().dest_targets == std::vector<std::string>{"Hillary Clinton"});
  CHECK(parse_ablation("no-tscot") == Ablation::NoTscot);
  CHECK_THROWS_AS(parse_ablation("w/o everything"), Error);
}

TEST_CASE("run config: relative paths resolve against the config file") {
  const fs::path dir = fresh_dir("config_paths");
  write_file_atomic(dir / "run.json", R"({"backbone": "bb", "paths": {"data": ["d/m.json"], "cache": "c"}, "llm": {"endpoint": "MOCK", "fixtures": "fx"}})");
  const RunConfig c = RunConfig::load(dir / "run.json");
  CHECK(c.backbone == dir / "bb");
  CHECK(c.paths.data.at(0) == dir / "d/m.json");
  CHECK(c.paths.cache == dir / "c");
  CHECK(c.paths.checkpoints == dir / "checkpoints");
  CHECK(c.llm.fixtures_dir == dir / "fx");
}

TEST_CASE("prepare_nles: cardinality, idempotence, ablation bypass and staleness") {
  RunConfig c = small_setup("prepare");
  CallCounter calls;
  const auto dir = prepare_nles(c, calls.env());
  REQUIRE(dir);
  CHECK(tsv_rows(*dir / "explanations.tsv") == 12 * 2);
  CHECK(calls.requests == 2 + 12 * 2);  // one elicitation per target, one explanation per cell

  CallCounter again;
  CHECK(prepare_nles(c, again.env()) == dir);
  CHECK(again.backends == 0);

  // Any edit to the corpus invalidates it; regeneration is served by the cache.
  std::ofstream(*dir / "explanations.tsv", std::ios::app) << "tampered\n";
  CHECK_THROWS_WITH_AS(load_nle_corpus(*dir, c), doctest::Contains("manifest hash"), Error);
  CallCounter regen;
  CHECK(prepare_nles(c, regen.env()) == dir);
  CHECK(regen.backends == 1);
  CHECK(regen.requests == 0);
  CHECK(load_nle_corpus(*dir, c).size() == 24);

  RunConfig wo_t = c;
  wo_t.ablation = Ablation::NoTscot;
  CallCounter none;
  CHECK_FALSE(prepare_nles(wo_t, none.env()));
  CHECK(none.backends == 0);

  // A different gamma is a different corpus.
  RunConfig g3 = c;
  g3.gamma = 3;
  CHECK(nle_corpus_dir(g3) != *dir);
}

TEST_CASE("prepare_nles: failed cells surface as PartialCompletion and resume from cache") {
  RunConfig c = small_setup("partial");
  // Every explanation request for the first perspective outlasts the retry budget.
  json rules = json::parse(read_file(c.llm.fixtures_dir / "rules.json"));
  const json fault = {{"contains", {"give the stance analysis", "under the economic cost,"}}, {"responses", {"x"}}, {"fail_first", 1000}};
  rules["rules"].insert(rules["rules"].begin(), fault);
  write_file_atomic(c.llm.fixtures_dir / "00_faults.json", json{{"rules", rules["rules"]}}.dump());
  fs::remove(c.llm.fixtures_dir / "rules.json");
  CallCounter calls;
  try {
    prepare_nles(c, calls.env());
    FAIL("expected PartialCompletion");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PartialCompletion);
    CHECK(exit_code_for(e.code()) == 4);
  }
  const json manifest = json::parse(read_file(nle_corpus_dir(c) / "manifest.json"));
  CHECK_FALSE(manifest.at("complete").get<bool>());
  CHECK(manifest.at("failed").size() == 12);
  CHECK(manifest.at("rows") == 12);
  CHECK(tsv_rows(nle_corpus_dir(c) / "explanations.tsv") == 12);

  // With the fault gone only the failed cells reach the backend.
  fs::remove(c.llm.fixtures_dir / "00_faults.json");
  rules["rules"].erase(rules["rules"].begin());
  write_file_atomic(c.llm.fixtures_dir / "rules.json", rules.dump());
  CallCounter resume;
  const auto dir = prepare_nles(c, resume.env());
  REQUIRE(dir);
  CHECK(resume.requests == 12);
  CHECK(tsv_rows(*dir / "explanations.tsv") == 24);
}

TEST_CASE("train: loss falls, runs are deterministic and artifacts are complete") {
  RunConfig c = small_setup("train");
  c.optimizer.epochs = 25;  // 2 steps per epoch
  CallCounter calls;
  const RunResult a = train(c, calls.env());
  REQUIRE(a.curve.size() == 50);
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += a.curve[i].loss;
    return s / static_cast<double>(to - from);
  };
  CHECK(mean(45, 50) < mean(0, 5));

  c.optimizer.epochs = 100;
  c.optimizer.max_steps = 50;
  const RunResult b = train(c, calls.env());
  CHECK(b.curve.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) CHECK(b.curve[i].loss == a.curve[i].loss);

  const RunResult b2 = train(c, calls.env());
  check_same_curve(b, b2);
  CHECK(b.provenance.checkpoint_sha256 == b2.provenance.checkpoint_sha256);
  CHECK(b.report.to_json() == b2.report.to_json());

  const fs::path ckpt = b.checkpoint;
  for (const char* f : {"model/backbone/model.safetensors", "model/query.safetensors", "model/verbalizer.json", "optimizer/optimizer.json",
                        "run_config.json", "curve.tsv"}) {
    CHECK_MESSAGE(fs::exists(ckpt / f), f);
  }
  CHECK(tsv_rows(ckpt / "curve.tsv") == 50);
  CHECK(RunConfig::from_json(json::parse(read_file(ckpt / "run_config.json"))).to_json() == b.config.to_json());
  CHECK(b.provenance.backbone_sha256 == backbone_hash(c.backbone));
  CHECK(b.provenance.nle_corpus_sha256 == sha256_hex(read_file(nle_corpus_dir(c) / "explanations.tsv")));
  REQUIRE(b.train_report);
  CHECK(b.wall_time_s > 0);

  const fs::path preds = c.paths.reports / c.run_name() / "predictions.tsv";
  CHECK(tsv_rows(preds) == 6);
  CHECK(read_file(preds).starts_with("example_id\tyhat_favor\tyhat_against\tyhat_none\tpredicted_label\talpha_1\talpha_2\n"));

  // The mock's own judgments are exact on this task.
  REQUIRE(b.llm_judgment_report);
  CHECK(b.llm_judgment_report->macro_favor_against == 1.0);

  const auto reloaded = evaluate_run(ckpt, c);
  CHECK(reloaded.to_json() == b.report.to_json());
  CHECK(calls.requests == 2 + 24);  // NLEs generated once for all three runs
}

TEST_CASE("train: worker threads do not change results between identical runs") {
  RunConfig c = small_setup("threads");
  c.optimizer.max_steps = 6;
  c.optimizer.epochs = 3;
  c.threads = 3;
  const RunResult a = train(c);
  const RunResult b = train(c);
  check_same_curve(a, b);
  c.threads = 1;
  const RunResult serial = train(c);
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(std::abs(a.curve[i].loss - serial.curve[i].loss) < 1e-4);
}

TEST_CASE("train: lr = 0 leaves the loss unchanged") {
  RunConfig c = small_setup("lr0", 0.0);
  c.optimizer.lr = 0.0;
  c.optimizer.batch_size = 6;
  c.optimizer.epochs = 5;
  const RunResult r = train(c);
  REQUIRE(r.curve.size() == 5);
  for (const auto& p : r.curve) CHECK(p.loss == doctest::Approx(r.curve[0].loss).epsilon(1e-5));
}

TEST_CASE("train: non-finite loss aborts with a diagnostic dump") {
  RunConfig c = small_setup("diverge");
  Backbone bb = load_backbone(c.backbone);
  for (int id = 0; id < bb.config.vocab_size; ++id) bb.weights.word_emb(id, 0) = std::numeric_limits<float>::quiet_NaN();
  save_backbone(c.backbone, bb);
  try {
    train(c);
    FAIL("expected DivergenceDetected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivergenceDetected);
  }
  const json dump = json::parse(read_file(c.paths.checkpoints / c.run_name() / "divergence.json"));
  CHECK(dump.at("step") == 1);
  CHECK(dump.at("examples").size() == 4);
}

TEST_CASE("evaluate_run: missing NLE corpus is reported") {
  RunConfig c = small_setup("missing");
  c.optimizer.max_steps = 1;
  const RunResult r = train(c);
  RunConfig other = c;
  other.gamma = 3;
  try {
    evaluate_run(r.checkpoint, other);
    FAIL("expected MissingNLEs");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingNLEs);
  }
}

TEST_CASE("run_ablations: three rows, w/o T makes no backend calls, results match manual runs") {
  RunConfig c = small_setup("ablate");
  c.optimizer.max_steps = 3;
  CallCounter calls;
  const auto results = run_ablations(c, calls.env());
  REQUIRE(results.size() == 3);
  CHECK(results[0].config.ablation == Ablation::None);
  CHECK(results[1].config.ablation == Ablation::NoTscot);
  CHECK(results[2].config.ablation == Ablation::NoSenticnet);
  CHECK(results[1].config.gamma == 1);
  CHECK(results[1].provenance.nle_corpus_sha256.empty());
  CHECK(results[2].config.verbalizer.expansion_limit == 0);
  CHECK(results[0].provenance.nle_corpus_sha256 == results[2].provenance.nle_corpus_sha256);

  RunConfig manual = c;
  manual.ablation = Ablation::NoTscot;
  fs::remove_all(c.paths.cache);
  CallCounter wo_t;
  const RunResult m = train(manual, wo_t.env());
  CHECK(wo_t.backends == 0);
  CHECK(wo_t.requests == 0);
  REQUIRE(m.curve.size() == results[1].curve.size());
  for (std::size_t i = 0; i < m.curve.size(); ++i) CHECK(m.curve[i].loss == results[1].curve[i].loss);
  CHECK(m.provenance.checkpoint_sha256 == results[1].provenance.checkpoint_sha256);

  const std::string tables = render_tables(results);
  CHECK(tables.find("| Method | synthetic |") != std::string::npos);
  CHECK(tables.find("| MPPT |") != std::string::npos);
  CHECK(tables.find("| - w/o T |") != std::string::npos);
  CHECK(tables.find("| - w/o S |") != std::string::npos);
}

TEST_CASE("gamma_sweep: one result per gamma, degenerate interval equals train") {
  RunConfig c = small_setup("sweep");
  c.optimizer.max_steps = 2;
  const auto s = gamma_sweep(c, 2, 3);
  REQUIRE(s.results.size() == 2);
  REQUIRE(s.series.size() == 2);
  CHECK(s.series[0].first == 2);
  CHECK(s.series[1].first == 3);
  CHECK(s.series[1].second == s.results[1].metric());

  const auto single = gamma_sweep(c, 3, 3);
  REQUIRE(single.results.size() == 1);
  RunConfig g3 = c;
  g3.gamma = 3;
  check_same_curve(single.results[0], train(g3));
  CHECK_THROWS_AS(gamma_sweep(c, 4, 3), Error);
}

TEST_CASE("gamma_sweep prefix mode: smaller gammas reuse the leading perspectives") {
  RunConfig c = small_setup("prefix");
  c.sweep_mode = SweepMode::Prefix;
  c.sweep_max_gamma = 6;
  c.gamma = 2;
  const auto dir2 = prepare_nles(c);
  c.gamma = 5;
  const auto dir5 = prepare_nles(c);
  const auto p2 = json::parse(read_file(*dir2 / "perspectives.json"));
  const auto p5 = json::parse(read_file(*dir5 / "perspectives.json"));
  for (std::size_t t = 0; t < p2.size(); ++t) {
    const auto a = p2[t].at("perspectives");
    const auto b = p5[t].at("perspectives");
    REQUIRE(a.size() == 2);
    REQUIRE(b.size() == 5);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
  }
}

TEST_CASE("report: golden tables, missing-metric dashes and bundle files") {
  auto make = [](const std::string& task, Ablation a, double fa, std::optional<double> dev) {
    RunResult r;
    r.config.task = task;
    r.config.ablation = a;
    r.config.seed = 1;
    r.config.gamma = 4;
    r.report.macro_favor_against = fa;
    r.report.per_class_f1 = {0.7, 0.6, 0.5};
    r.report.macro_all = 0.6;
    r.dev_metric = dev;
    r.curve = {{1, 1.0}, {2, 0.5}};
    r.wall_time_s = 2.5;
    return r;
  };
  std::vector<RunResult> results = {make("D->H", Ablation::None, 0.7351, std::nullopt), make("D->H", Ablation::NoTscot, 0.5312, std::nullopt),
                                    make("F→L", Ablation::None, 0.6741, std::nullopt)};
  RunResult vast = make("VAST", Ablation::None, 0.0, 0.7);
  vast.config.mode = corpus::TaskMode::ZeroShot;
  results.push_back(vast);
  RunResult g2 = make("D->H", Ablation::None, 0.6952, std::nullopt);
  g2.config.gamma = 2;
  results.push_back(g2);

  const std::string golden = read_file(fs::path(MPPT_SOURCE_DIR) / "tests/fixtures/report/tables.golden.md");
  CHECK(render_tables(results) == golden);

  const RunResult one = make("D->H", Ablation::None, 0.5, std::nullopt);
  const std::string single = render_tables({one});
  CHECK(single.find("| MPPT | — | — | — | 50.0 |") != std::string::npos);
  CHECK(single.find("| d-h_g4_none_s1 | D->H | 4 | NONE | 1 | 50.0 | — | — | — | 2 | 2.5 |") != std::string::npos);

  const fs::path dir = fresh_dir("report");
  write_report(results, dir);
  for (const char* f : {"tables.md", "results.json", "gamma_curve.tsv", "training_curves.tsv"}) CHECK(fs::exists(dir / f));
  CHECK(tsv_rows(dir / "gamma_curve.tsv") == results.size());
  CHECK(tsv_rows(dir / "training_curves.tsv") == 2 * results.size());
  const auto back = json::parse(read_file(dir / "results.json"));
  REQUIRE(back.size() == results.size());
  CHECK(RunResult::from_json(back[3]).to_json() == results[3].to_json());
  CHECK_THROWS_AS(write_report({}, dir), Error);
}

TEST_CASE("paired bootstrap") {
  const std::vector<StanceLabel> gold = {StanceLabel::Favor, StanceLabel::Against, StanceLabel::None, StanceLabel::Favor,
                                         StanceLabel::Against, StanceLabel::Favor};
  std::vector<StanceLabel> wrong(gold.size(), StanceLabel::None);
  const auto same = paired_bootstrap(gold, gold, gold, corpus::TaskMode::CrossTarget, 200, 1);
  CHECK(same.delta == 0.0);
  CHECK(same.p_value == 1.0);
  const auto better = paired_bootstrap(gold, wrong, gold, corpus::TaskMode::CrossTarget, 200, 1);
  CHECK(better.delta == 1.0);
  CHECK(better.p_value < 0.05);
  CHECK(paired_bootstrap(gold, wrong, gold, corpus::TaskMode::CrossTarget, 200, 1).p_value == better.p_value);
  CHECK_THROWS_AS(paired_bootstrap(gold, wrong, std::span(gold).first(3), corpus::TaskMode::CrossTarget, 10, 1), Error);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorCode::InvalidConfig) == 2);
  CHECK(exit_code_for(ErrorCode::MissingColumn) == 2);
  CHECK(exit_code_for(ErrorCode::BackendUnavailable) == 3);
  CHECK(exit_code_for(ErrorCode::CountMismatch) == 3);
  CHECK(exit_code_for(ErrorCode::PartialCompletion) == 4);
}
