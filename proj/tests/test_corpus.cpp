#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mppt/corpus.hpp"
#include "mppt/delimited.hpp"

using namespace mppt;
using namespace mppt::corpus;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(MPPT_SOURCE_DIR) / "tests/fixtures/corpus";

constexpr auto F = StanceLabel::Favor;
constexpr auto A = StanceLabel::Against;
constexpr auto N = StanceLabel::None;

// Independent oracle: F1 = 2TP / (2TP + FP + FN), counted per class by a direct scan.
std::array<double, 3> brute_force_f1(const std::vector<StanceLabel>& gold, const std::vector<StanceLabel>& pred) {
  std::array<double, 3> out{};
  for (auto label : kAllLabels) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == label && gold[i] == label) ++tp;
      if (pred[i] == label && gold[i] != label) ++fp;
      if (pred[i] != label && gold[i] == label) ++fn;
    }
    const int denom = 2 * tp + fp + fn;
    out[index_of(label)] = denom == 0 ? 0.0 : 2.0 * tp / denom;
  }
  return out;
}

Example make(std::string id, std::string target, std::optional<StanceLabel> label = F, Split split = Split::Train) {
  return Example{std::move(id), "some text", std::move(target), label, split};
}

}  // namespace

TEST_CASE("delimited parser handles quotes, doubled quotes and embedded newlines") {
  const auto rows = parse_delimited("a,b\n\"x, y\",\"say \"\"hi\"\"\nthere\"\n", ',');
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].fields[0] == "x, y");
  CHECK(rows[1].fields[1] == "say \"hi\"\nthere");
  CHECK(rows[1].line == 2);

  const std::vector<std::string> fields = {"plain", "with,comma", "with \"quote\"", "multi\nline"};
  const auto parsed = parse_delimited(format_delimited_row(fields, ','), ',');
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].fields == fields);
}

TEST_CASE("load_dataset: five-row fixture with one blank text") {
  const auto result = load_dataset(DatasetManifest::load(kFixtures / "five_rows.json"));
  CHECK(result.examples.size() == 4);
  CHECK(result.summary.rows_read == 5);
  CHECK(result.summary.rows_kept == 4);
  REQUIRE(result.summary.rejections.size() == 1);
  CHECK(result.summary.rejections[0].reason == ErrorCode::EmptyField);
  CHECK(result.summary.rejections[0].row == 2);
}

TEST_CASE("load_dataset: header-only file gives an empty list") {
  const auto result = load_dataset(DatasetManifest::load(kFixtures / "empty.json"));
  CHECK(result.examples.empty());
  CHECK(result.summary.rows_kept == 0);
  CHECK(result.summary.to_json()["rows_kept"] == 0);
}

TEST_CASE("load_dataset: SemEval-style tab file covers the four standard targets") {
  const auto result = load_dataset(DatasetManifest::load(kFixtures / "sem16_sample.json"));
  std::set<std::string> targets;
  for (const auto& ex : result.examples) targets.insert(ex.target);
  CHECK(targets == std::set<std::string>{"Hillary Clinton", "Donald Trump", "Legalization of Abortion", "Feminist Movement"});
  // Quoting disabled: the literal quote-free tweet survives and whitespace is collapsed.
  CHECK(result.examples[0].text == "@tedcruz And, #HandsOffMyBirthControl ... #SemST");
}

TEST_CASE("load_dataset: VAST-style integer labels and split column") {
  const auto manifest = DatasetManifest::load(kFixtures / "vast_sample.json");
  const auto result = load_dataset(manifest);
  REQUIRE(result.examples.size() == 6);
  CHECK(result.examples[0].label == F);
  CHECK(result.examples[1].label == A);
  CHECK(result.examples[1].text == "Cutting taxes only helps the rich, \"trickle down\" never works.");
  CHECK(result.examples[2].text == "The new stadium opens next week with a parade.");
  CHECK(result.examples[3].split == Split::Dev);
  CHECK(result.examples[4].split == Split::Test);
  CHECK(result.examples[0].id == "vast_sample:1");
}

TEST_CASE("load_dataset: unknown labels and missing columns") {
  auto manifest = DatasetManifest::load(kFixtures / "five_rows.json");
  manifest.label_map.erase("NONE");
  const auto result = load_dataset(manifest);
  CHECK(result.examples.size() == 3);
  REQUIRE(result.summary.rejections.size() == 2);
  CHECK(result.summary.rejections[1].reason == ErrorCode::UnknownLabel);

  manifest.text_column = "body";
  try {
    load_dataset(manifest);
    FAIL("expected MissingColumn");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingColumn);
  }
}

TEST_CASE("manifest label map is bijective and round-trips") {
  const auto manifest = DatasetManifest::load(kFixtures / "vast_sample.json");
  for (auto label : kAllLabels) {
    const auto native = manifest.native_label(label);
    REQUIRE(native);
    CHECK(manifest.canonical_label(*native) == label);
  }
  nlohmann::json j = nlohmann::json::parse(R"({"path":"x.csv","col":{"text":"t","target":"q","label":"l"},
      "label_map":{"pro":"FAVOR","yes":"FAVOR"}})");
  CHECK_THROWS_AS(DatasetManifest::from_json(j, "."), Error);
}

TEST_CASE("unicode normalization at ingestion is NFC plus whitespace collapse, no lowercasing") {
  const auto dir = std::filesystem::temp_directory_path() / "mppt_corpus_nfc";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "d.csv");
    // "Cafe" with a combining acute accent, tab and newline runs.
    out << "text,target,label\n\"Cafe\xCC\x81\t  IS\nOPEN\",Target,FAVOR\n";
  }
  nlohmann::json j = {{"path", "d.csv"},
                      {"col", {{"text", "text"}, {"target", "target"}, {"label", "label"}}},
                      {"label_map", {{"FAVOR", "FAVOR"}}}};
  const auto result = load_dataset(DatasetManifest::from_json(j, dir));
  REQUIRE(result.examples.size() == 1);
  CHECK(result.examples[0].text == "Caf\xC3\xA9 IS OPEN");
}

TEST_CASE("build_task: D->H on SemEval-style data") {
  const auto examples = load_dataset(DatasetManifest::load(kFixtures / "sem16_sample.json")).examples;
  const auto spec = find_standard_task("D→H");
  REQUIRE(spec);
  const auto part = build_task(examples, *spec);
  CHECK(part.train.size() == 2);
  CHECK(part.eval.size() == 2);
  for (const auto& ex : part.train) CHECK(ex.target == "Donald Trump");
  for (const auto& ex : part.eval) CHECK(ex.target == "Hillary Clinton");
  CHECK(part.dev.empty());
}

TEST_CASE("build_task: synthetic 6/4 split and forbidden overlap") {
  std::vector<Example> examples;
  for (int i = 0; i < 6; ++i) examples.push_back(make("a" + std::to_string(i), "Target A"));
  for (int i = 0; i < 4; ++i) examples.push_back(make("b" + std::to_string(i), "Target B"));
  const TaskSpec spec{"A->B", {"Target A"}, {"Target B"}, TaskMode::CrossTarget};
  const auto part = build_task(examples, spec);
  CHECK(part.train.size() == 6);
  CHECK(part.eval.size() == 4);

  const TaskSpec same{"A->A", {"Target A"}, {"target a"}, TaskMode::CrossTarget};
  try {
    build_task(examples, same);
    FAIL("expected TargetLeak");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TargetLeak);
  }

  const TaskSpec missing{"A->C", {"Target A"}, {"Target C"}, TaskMode::CrossTarget};
  try {
    build_task(examples, missing);
    FAIL("expected EmptyPartition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyPartition);
  }
}

TEST_CASE("build_task: zero-shot respects native splits and rejects topic leaks") {
  const auto examples = load_dataset(DatasetManifest::load(kFixtures / "vast_sample.json")).examples;
  const TaskSpec spec{"vast", {}, {}, TaskMode::ZeroShot};
  const auto part = build_task(examples, spec);
  CHECK(part.train.size() == 3);
  CHECK(part.dev.size() == 1);
  CHECK(part.eval.size() == 2);

  auto leaky = examples;
  leaky.back().target = "Tax Cuts";
  try {
    build_task(leaky, spec);
    FAIL("expected TargetLeak");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TargetLeak);
  }
}

TEST_CASE("build_task property: disjoint exact cover of the in-task examples") {
  std::mt19937 rng(7);
  const std::vector<std::string> targets = {"T0", "T1", "T2", "T3", "T4"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Example> examples;
    const int n = 2 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) examples.push_back(make(std::to_string(i), targets[rng() % targets.size()]));
    TaskSpec spec{"rand", {}, {}, TaskMode::CrossTarget};
    for (const auto& t : targets) {
      const auto r = rng() % 3;
      if (r == 0) spec.source_targets.push_back(t);
      if (r == 1) spec.dest_targets.push_back(t);
    }
    TaskPartition part;
    try {
      part = build_task(examples, spec);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyPartition);
      continue;
    }
    std::set<std::string> seen;
    for (const auto& ex : part.train) {
      CHECK(std::find(spec.source_targets.begin(), spec.source_targets.end(), ex.target) != spec.source_targets.end());
      CHECK(seen.insert(ex.id).second);
    }
    for (const auto& ex : part.eval) {
      CHECK(std::find(spec.dest_targets.begin(), spec.dest_targets.end(), ex.target) != spec.dest_targets.end());
      CHECK(seen.insert(ex.id).second);
    }
    std::size_t in_task = 0;
    for (const auto& ex : examples) {
      const bool src = std::find(spec.source_targets.begin(), spec.source_targets.end(), ex.target) != spec.source_targets.end();
      const bool dst = std::find(spec.dest_targets.begin(), spec.dest_targets.end(), ex.target) != spec.dest_targets.end();
      if (src || dst) ++in_task;
    }
    CHECK(seen.size() == in_task);
  }
}

TEST_CASE("evaluate: hand-computed confusion matrix") {
  const std::vector<StanceLabel> gold = {F, F, A, A, N};
  const std::vector<StanceLabel> pred = {F, A, A, N, N};
  const auto report = evaluate(gold, pred);
  // FAVOR: TP 1, FP 0, FN 1. AGAINST: TP 1, FP 1, FN 1. NONE: TP 1, FP 1, FN 0.
  const auto oracle = brute_force_f1(gold, pred);
  CHECK(oracle[0] == doctest::Approx(2.0 / 3.0));
  CHECK(oracle[1] == doctest::Approx(0.5));
  CHECK(report.per_class_f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(report.per_class_f1[1] == doctest::Approx(0.5));
  CHECK(report.per_class_f1[2] == doctest::Approx(2.0 / 3.0));
  CHECK(report.macro_favor_against == doctest::Approx(7.0 / 12.0));
  CHECK(report.counts[1][2] == 1);
}

TEST_CASE("evaluate: perfect prediction, degenerate class and errors") {
  const std::vector<StanceLabel> gold = {F, A, N, F, A};
  const auto perfect = evaluate(gold, gold);
  for (double f1 : perfect.per_class_f1) CHECK(f1 == 1.0);
  CHECK(perfect.macro_favor_against == 1.0);
  CHECK(perfect.macro_all == 1.0);

  const std::vector<StanceLabel> no_against = {F, F, N, F, N};
  const auto report = evaluate(gold, no_against);
  CHECK(report.per_class_f1[1] == 0.0);

  const std::vector<StanceLabel> shorter = {F};
  CHECK_THROWS_AS(evaluate(gold, shorter), Error);
  CHECK_THROWS_AS(evaluate(std::vector<StanceLabel>{}, std::vector<StanceLabel>{}), Error);
}

TEST_CASE("evaluate property: oracle equivalence, invariants, permutation invariance") {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<StanceLabel> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = kAllLabels[rng() % 3];
      pred[i] = kAllLabels[rng() % 3];
    }
    const auto report = evaluate(gold, pred);
    const auto oracle = brute_force_f1(gold, pred);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(report.per_class_f1[c] - oracle[c]) <= 1e-12);
    CHECK(report.macro_favor_against == doctest::Approx((report.per_class_f1[0] + report.per_class_f1[1]) / 2));

    for (std::size_t g = 0; g < 3; ++g) {
      const auto row_sum = std::accumulate(report.counts[g].begin(), report.counts[g].end(), std::size_t{0});
      CHECK(row_sum == static_cast<std::size_t>(std::count(gold.begin(), gold.end(), kAllLabels[g])));
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<StanceLabel> gold_p(n), pred_p(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold_p[i] = gold[order[i]];
      pred_p[i] = pred[order[i]];
    }
    const auto permuted = evaluate(gold_p, pred_p);
    CHECK(permuted.per_class_f1 == report.per_class_f1);
    CHECK(permuted.counts == report.counts);
  }
}

TEST_CASE("EvalReport json round-trip") {
  const std::vector<StanceLabel> gold = {F, F, A, A, N};
  const std::vector<StanceLabel> pred = {F, A, A, N, N};
  const auto report = evaluate(gold, pred);
  const auto back = EvalReport::from_json(report.to_json());
  CHECK(back.counts == report.counts);
  CHECK(back.macro_all == report.macro_all);
}
