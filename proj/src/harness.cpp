#include "mppt/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mppt/backbone.hpp"
#include "mppt/delimited.hpp"
#include "mppt/model.hpp"
#include "mppt/optimizer.hpp"
#include "mppt/parallel.hpp"
#include "mppt/prompt.hpp"
#include "mppt/random.hpp"
#include "mppt/text.hpp"
#include "mppt/util.hpp"
#include "mppt/verbalizer.hpp"

namespace mppt::harness {

using nlohmann::json;
namespace fs = std::filesystem;
using corpus::EvalReport;
using corpus::Example;
using multipln::ModelGrads;
using multipln::PromptInstance;
using multipln::StanceModel;

double primary_metric(const EvalReport& report, corpus::TaskMode mode) {
  return mode == corpus::TaskMode::ZeroShot ? report.macro_all : report.macro_favor_against;
}

double RunResult::metric() const { return primary_metric(report, config.mode); }

namespace {

json optional_report(const std::optional<EvalReport>& r) { return r ? r->to_json() : json(nullptr); }

std::optional<EvalReport> read_optional_report(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return EvalReport::from_json(j.at(key));
}

}  // namespace

json RunResult::to_json() const {
  json c = json::array();
  for (const auto& p : curve) c.push_back({p.step, p.loss});
  return {{"config", config.to_json()},
          {"run_name", config.run_name()},
          {"metric", metric()},
          {"report", report.to_json()},
          {"train_report", optional_report(train_report)},
          {"dev_metric", dev_metric ? json(*dev_metric) : json(nullptr)},
          {"llm_judgment_report", optional_report(llm_judgment_report)},
          {"training_curve", c},
          {"wall_time_s", wall_time_s},
          {"checkpoint", checkpoint.string()},
          {"provenance",
           {{"backbone_sha256", provenance.backbone_sha256},
            {"checkpoint_sha256", provenance.checkpoint_sha256},
            {"nle_corpus_sha256", provenance.nle_corpus_sha256},
            {"nle_corpus_path", provenance.nle_corpus_path}}}};
}

RunResult RunResult::from_json(const json& j) {
  RunResult r;
  r.config = RunConfig::from_json(j.at("config"));
  r.report = EvalReport::from_json(j.at("report"));
  r.train_report = read_optional_report(j, "train_report");
  if (j.contains("dev_metric") && !j.at("dev_metric").is_null()) r.dev_metric = j.at("dev_metric").get<double>();
  r.llm_judgment_report = read_optional_report(j, "llm_judgment_report");
  for (const auto& p : j.value("training_curve", json::array())) r.curve.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.checkpoint = j.value("checkpoint", std::string());
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    r.provenance = {p.value("backbone_sha256", ""), p.value("checkpoint_sha256", ""), p.value("nle_corpus_sha256", ""),
                    p.value("nle_corpus_path", "")};
  }
  return r;
}

TaskData load_task(const RunConfig& config) {
  std::vector<Example> all;
  std::set<std::string> ids;
  for (const auto& manifest_path : config.paths.data) {
    const auto manifest = corpus::DatasetManifest::load(manifest_path);
    auto loaded = corpus::load_dataset(manifest);
    if (!loaded.summary.rejections.empty()) {
      spdlog::warn("{}: {} of {} rows rejected", manifest.name, loaded.summary.rejections.size(), loaded.summary.rows_read);
    }
    for (auto& e : loaded.examples) {
      if (!ids.insert(e.id).second) throw Error(ErrorCode::DuplicateId, "example id '" + e.id + "' occurs in more than one dataset");
      all.push_back(std::move(e));
    }
  }
  TaskData data{config.task_spec(), {}};
  data.partition = corpus::build_task(all, data.spec);
  return data;
}

namespace {

std::vector<Example> all_examples(const corpus::TaskPartition& p) {
  std::vector<Example> out = p.train;
  out.insert(out.end(), p.dev.begin(), p.dev.end());
  out.insert(out.end(), p.eval.begin(), p.eval.end());
  return out;
}

std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "task" : out;
}

int elicitation_gamma(const RunConfig& c) { return c.sweep_mode == SweepMode::Prefix ? c.sweep_max_gamma : c.gamma; }

std::string nle_input_hash(const RunConfig& c, std::span<const Example> examples) {
  std::string buf = "gamma=" + std::to_string(c.gamma) + "\nelicit=" + std::to_string(elicitation_gamma(c)) + "\nmodel=" +
                    c.llm.model_id + "\ntemperature=" + std::to_string(c.llm.sampling.temperature) +
                    "\nmax_output_tokens=" + std::to_string(c.llm.sampling.max_output_tokens) + "\n";
  for (const auto& e : examples) buf += e.id + "\t" + e.target + "\t" + e.text + "\n";
  return sha256_hex(buf);
}

struct ScopedBackendReport {
  const Environment& env;
  const tscot::LlmBackend& backend;
  ~ScopedBackendReport() {
    if (env.on_backend_done) env.on_backend_done(backend);
  }
};

}  // namespace

fs::path nle_corpus_dir(const RunConfig& config) {
  const RunConfig c = config.effective();
  std::string name = slug(c.task) + "_g" + std::to_string(c.gamma);
  if (c.sweep_mode == SweepMode::Prefix) name += "_of" + std::to_string(c.sweep_max_gamma);
  return c.paths.nle_corpus / name;
}

std::optional<fs::path> prepare_nles(const RunConfig& config, const Environment& env) {
  const RunConfig c = config.effective();
  c.validate();
  if (c.ablation == Ablation::NoTscot) return std::nullopt;

  const TaskData data = load_task(c);
  const std::vector<Example> examples = all_examples(data.partition);
  const std::string input_hash = nle_input_hash(c, examples);
  const fs::path dir = nle_corpus_dir(c);
  const fs::path manifest_path = dir / "manifest.json";

  if (fs::exists(manifest_path)) {
    const json m = json::parse(read_file(manifest_path));
    const bool fresh = m.value("input_sha256", "") == input_hash && m.value("complete", false) && fs::exists(dir / "explanations.tsv") &&
                       sha256_hex(read_file(dir / "explanations.tsv")) == m.value("explanations_sha256", "");
    if (fresh) {
      spdlog::info("NLE corpus {} is current; reusing it", dir.string());
      return dir;
    }
    spdlog::info("NLE corpus {} is stale or incomplete; regenerating from the response cache", dir.string());
  }

  std::unique_ptr<tscot::LlmBackend> backend = env.make_backend ? env.make_backend(c.llm) : tscot::make_backend(c.llm);
  const ScopedBackendReport report{env, *backend};
  const tscot::ResponseCache cache(c.paths.cache);
  const tscot::CachedLlm llm(*backend, cache, c.llm);

  std::vector<tscot::PerspectiveSet> sets;
  std::set<std::string> seen;
  for (const auto& e : examples) {
    if (!seen.insert(text::fold_key(e.target)).second) continue;
    auto set = tscot::elicit_perspectives(e.target, elicitation_gamma(c), llm);
    if (set.gamma > c.gamma) {
      set.perspectives.resize(static_cast<std::size_t>(c.gamma));
      set.gamma = c.gamma;
    }
    sets.push_back(std::move(set));
  }
  const auto index = tscot::index_perspectives(sets);
  const tscot::ExplanationRun run = tscot::generate_explanations(examples, index, llm, c.llm_parallelism);

  fs::create_directories(dir);
  tscot::write_explanations(dir / "explanations.tsv", run.explanations);
  json pj = json::array();
  for (const auto& s : sets) pj.push_back(s.to_json());
  write_file_atomic(dir / "perspectives.json", pj.dump(2) + "\n");
  json failed = json::array();
  for (const auto& f : run.failed) failed.push_back({{"example_id", f.example_id}, {"perspective_index", f.perspective_index}, {"reason", f.reason}});
  const json manifest = {{"task", c.task},
                         {"gamma", c.gamma},
                         {"elicitation_gamma", elicitation_gamma(c)},
                         {"llm", c.llm.to_json()},
                         {"examples", examples.size()},
                         {"expected_rows", examples.size() * static_cast<std::size_t>(c.gamma)},
                         {"rows", run.explanations.size()},
                         {"complete", run.complete()},
                         {"failed", failed},
                         {"input_sha256", input_hash},
                         {"explanations_sha256", sha256_hex(read_file(dir / "explanations.tsv"))},
                         {"created_at", utc_timestamp()}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  if (!run.complete()) {
    throw Error(ErrorCode::PartialCompletion, std::to_string(run.failed.size()) + " of " + std::to_string(examples.size() * c.gamma) +
                                                  " explanation cells failed; completed cells are cached, rerun to resume (" + dir.string() +
                                                  ")");
  }
  return dir;
}

std::vector<tscot::Explanation> load_nle_corpus(const fs::path& dir, const RunConfig& config) {
  const RunConfig c = config.effective();
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::MissingNLEs, "no NLE corpus manifest at " + manifest_path.string());
  const json m = json::parse(read_file(manifest_path));
  const std::string content = read_file(dir / "explanations.tsv");
  if (sha256_hex(content) != m.value("explanations_sha256", "")) {
    throw Error(ErrorCode::StaleCorpus, dir.string() + ": explanations.tsv does not match its manifest hash");
  }
  const TaskData data = load_task(c);
  if (m.value("input_sha256", "") != nle_input_hash(c, all_examples(data.partition))) {
    throw Error(ErrorCode::StaleCorpus, dir.string() + " was built from different data or settings; rerun prepare");
  }
  return tscot::read_explanations(dir / "explanations.tsv");
}

namespace {

using NleIndex = std::map<std::string, std::vector<const tscot::Explanation*>>;

NleIndex index_nles(const std::vector<tscot::Explanation>& nles) {
  NleIndex out;
  for (const auto& e : nles) out[e.example_id].push_back(&e);
  for (auto& [_, v] : out) {
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->perspective_index < b->perspective_index; });
  }
  return out;
}

std::vector<std::vector<PromptInstance>> build_instances(std::span<const Example> examples, const NleIndex* nles, int gamma,
                                                         const WordPieceTokenizer& tok, int budget) {
  std::vector<std::vector<PromptInstance>> out;
  out.reserve(examples.size());
  std::size_t truncated = 0;
  for (const auto& ex : examples) {
    std::vector<PromptInstance> inst;
    if (nles == nullptr) {
      inst.push_back(multipln::build_prompt(ex, nullptr, tok, budget));
    } else {
      const auto it = nles->find(ex.id);
      const std::size_t have = it == nles->end() ? 0 : it->second.size();
      if (have < static_cast<std::size_t>(gamma)) {
        throw Error(ErrorCode::MissingNLEs, "example '" + ex.id + "' has " + std::to_string(have) + " of " + std::to_string(gamma) +
                                                " explanations");
      }
      for (int i = 0; i < gamma; ++i) {
        const auto* nle = it->second[static_cast<std::size_t>(i)];
        if (nle->perspective_index != i) {
          throw Error(ErrorCode::MissingNLEs, "example '" + ex.id + "' lacks the explanation for perspective " + std::to_string(i));
        }
        inst.push_back(multipln::build_prompt(ex, nle, tok, budget));
      }
    }
    for (const auto& p : inst) truncated += p.truncation.truncated() ? 1 : 0;
    out.push_back(std::move(inst));
  }
  if (truncated > 0) spdlog::info("{} prompts truncated to {} tokens", truncated, budget);
  return out;
}

void add_into(ModelGrads& dst, ModelGrads& src) {
  std::vector<Mat<float>*> d;
  dst.encoder.visit([&](const std::string&, Mat<float>& m, ParamKind) { d.push_back(&m); });
  std::size_t k = 0;
  src.encoder.visit([&](const std::string&, Mat<float>& m, ParamKind) { *d[k++] += m; });
  dst.h += src.h;
}

void set_zero(ModelGrads& g) {
  g.encoder.set_zero();
  g.h.setZero();
}

struct Evaluated {
  EvalReport report;
  std::vector<multipln::Prediction> predictions;
};

Evaluated evaluate_model(const StanceModel& model, std::span<const Example> examples,
                         const std::vector<std::vector<PromptInstance>>& instances, std::size_t threads) {
  Evaluated out;
  out.predictions.resize(examples.size());
  for_each_pinned(threads, examples.size(), [&](std::size_t, std::size_t i) { out.predictions[i] = model.predict(instances[i]); });
  std::vector<StanceLabel> gold, pred;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].label) continue;
    gold.push_back(*examples[i].label);
    pred.push_back(out.predictions[i].label);
  }
  out.report = corpus::evaluate(gold, pred);
  return out;
}

void write_predictions(const fs::path& path, const std::vector<multipln::Prediction>& predictions, int gamma) {
  std::vector<std::string> header = {"example_id", "yhat_favor", "yhat_against", "yhat_none", "predicted_label"};
  for (int i = 1; i <= gamma; ++i) header.push_back("alpha_" + std::to_string(i));
  std::string out = format_delimited_row(header, '\t');
  auto num = [](double v) { return fmt::format("{:.6f}", v); };
  for (const auto& p : predictions) {
    std::vector<std::string> row = {p.example_id, num(p.yhat[0]), num(p.yhat[1]), num(p.yhat[2]), std::string(to_string(p.label))};
    for (double a : p.alpha) row.push_back(num(a));
    out += format_delimited_row(row, '\t');
  }
  write_file_atomic(path, out);
}

// Majority vote of the LLM's own per-perspective judgments; ties go to NONE.
std::optional<EvalReport> llm_judgment_score(std::span<const Example> examples, const NleIndex& nles) {
  std::vector<StanceLabel> gold, pred;
  bool any = false;
  for (const auto& ex : examples) {
    if (!ex.label) continue;
    std::array<int, kNumLabels> votes{};
    if (const auto it = nles.find(ex.id); it != nles.end()) {
      for (const auto* n : it->second) {
        if (n->llm_judgment) {
          ++votes[index_of(*n->llm_judgment)];
          any = true;
        }
      }
    }
    const int best = *std::max_element(votes.begin(), votes.end());
    StanceLabel label = StanceLabel::None;
    if (best > 0 && std::count(votes.begin(), votes.end(), best) == 1) {
      label = kAllLabels[static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin())];
    }
    gold.push_back(*ex.label);
    pred.push_back(label);
  }
  if (!any) return std::nullopt;
  return corpus::evaluate(gold, pred);
}

std::string checkpoint_hash(const fs::path& model_dir) {
  return sha256_hex(read_file(model_dir / "backbone" / "model.safetensors") + read_file(model_dir / "query.safetensors"));
}

verbalizer::Verbalizer build_verbalizer(const RunConfig& c) {
  auto v = verbalizer::base_verbalizer();
  if (c.verbalizer.expansion_limit > 0) v = verbalizer::expand(v, verbalizer::load_lexicon(c.verbalizer.lexicon), c.verbalizer.expansion_limit);
  return v;
}

void write_curve(const fs::path& path, const std::vector<CurvePoint>& curve) {
  std::string out = "step\tloss\n";
  for (const auto& p : curve) out += fmt::format("{}\t{:.9g}\n", p.step, p.loss);
  write_file_atomic(path, out);
}

}  // namespace

RunResult train(const RunConfig& config, const Environment& env) {
  const auto started = std::chrono::steady_clock::now();
  const RunConfig c = config.effective();
  c.validate();
  spdlog::info("run {}: task {}, gamma {}, ablation {}, seed {}", c.run_name(), c.task, c.gamma, to_string(c.ablation), c.seed);
  spdlog::info("seed streams: data-order, h-init, dropout (all from seed {})", c.seed);

  const TaskData data = load_task(c);
  const auto& part = data.partition;
  if (part.train.empty()) throw Error(ErrorCode::EmptyPartition, "task " + c.task + " has no training examples");

  RunResult result;
  result.config = c;
  std::vector<tscot::Explanation> nles;
  NleIndex nle_index;
  if (c.ablation != Ablation::NoTscot) {
    const fs::path dir = *prepare_nles(c, env);
    nles = load_nle_corpus(dir, c);
    nle_index = index_nles(nles);
    result.provenance.nle_corpus_path = dir.string();
    result.provenance.nle_corpus_sha256 = sha256_hex(read_file(dir / "explanations.tsv"));
  }
  const NleIndex* nle_ptr = c.ablation == Ablation::NoTscot ? nullptr : &nle_index;

  Backbone backbone = load_backbone(c.backbone);
  backbone.identity = c.backbone_id;
  result.provenance.backbone_sha256 = backbone_hash(c.backbone);
  StanceModel model = StanceModel::initialize(std::move(backbone), build_verbalizer(c), c.model, c.seed);

  const auto& tok = model.tokenizer();
  const auto train_inst = build_instances(part.train, nle_ptr, c.gamma, tok, c.model.max_seq_len);
  const auto dev_inst = build_instances(part.dev, nle_ptr, c.gamma, tok, c.model.max_seq_len);
  const auto eval_inst = build_instances(part.eval, nle_ptr, c.gamma, tok, c.model.max_seq_len);

  AdamWOptions adam;
  adam.lr = c.optimizer.lr;
  adam.weight_decay = c.optimizer.weight_decay;
  adam.max_grad_norm = c.optimizer.max_grad_norm;
  AdamW optimizer(adam);

  const fs::path ckpt_dir = c.paths.checkpoints / c.run_name();
  const fs::path report_dir = c.paths.reports / c.run_name();
  fs::create_directories(ckpt_dir);
  fs::create_directories(report_dir);

  const std::size_t workers = c.threads;
  std::vector<ModelGrads> grads;
  for (std::size_t w = 0; w < workers; ++w) grads.push_back(model.zero_grads());

  Rng order = Rng::stream(c.seed, "data-order");
  std::vector<std::size_t> perm(part.train.size());
  const auto batch_size = static_cast<std::size_t>(c.optimizer.batch_size);
  const double p_drop = model.dropout_probability();
  int step = 0;
  std::optional<StanceModel> best;
  bool stop = false;

  for (int epoch = 1; epoch <= c.optimizer.epochs && !stop; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    order.shuffle(perm);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < perm.size(); start += batch_size) {
      if (c.optimizer.max_steps > 0 && step >= c.optimizer.max_steps) {
        stop = true;
        break;
      }
      const std::size_t n = std::min(batch_size, perm.size() - start);
      for (auto& g : grads) set_zero(g);
      std::vector<double> losses(n);
      const float scale = 1.0f / static_cast<float>(n);
      for_each_pinned(workers, n, [&](std::size_t w, std::size_t k) {
        const std::size_t idx = perm[start + k];
        Rng drop = Rng::stream(c.seed, "dropout/" + std::to_string(step) + "/" + std::to_string(idx));
        losses[k] = model.accumulate_gradients(train_inst[idx], *part.train[idx].label, {&drop, p_drop}, scale, grads[w]);
      });
      const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
      if (!std::isfinite(loss)) {
        json dump = {{"step", step + 1}, {"epoch", epoch}, {"lr", c.optimizer.lr}, {"examples", json::array()}};
        for (std::size_t k = 0; k < n; ++k) {
          const double l = losses[k];
          dump["examples"].push_back({{"id", part.train[perm[start + k]].id}, {"loss", std::isfinite(l) ? json(l) : json(std::to_string(l))}});
        }
        json tail = json::array();
        for (std::size_t i = result.curve.size() > 10 ? result.curve.size() - 10 : 0; i < result.curve.size(); ++i) {
          tail.push_back({result.curve[i].step, result.curve[i].loss});
        }
        dump["recent_curve"] = tail;
        write_file_atomic(ckpt_dir / "divergence.json", dump.dump(2) + "\n");
        throw Error(ErrorCode::DivergenceDetected, "non-finite loss at step " + std::to_string(step + 1) + "; diagnostics in " +
                                                       (ckpt_dir / "divergence.json").string());
      }
      for (std::size_t w = 1; w < workers; ++w) add_into(grads[0], grads[w]);
      optimizer.step(model.parameters(grads[0]));
      ++step;
      result.curve.push_back({step, loss});
      epoch_loss += loss;
      ++epoch_steps;
    }
    if (epoch_steps > 0) spdlog::info("epoch {} done: {} steps, mean loss {:.4f}", epoch, step, epoch_loss / epoch_steps);
    if (!part.dev.empty()) {
      const double dev = primary_metric(evaluate_model(model, part.dev, dev_inst, workers).report, c.mode);
      spdlog::info("epoch {} dev metric {:.4f}", epoch, dev);
      if (!result.dev_metric || dev > *result.dev_metric) {
        result.dev_metric = dev;
        best = model;
      }
    }
  }
  const StanceModel& final_model = best ? *best : model;

  final_model.save(ckpt_dir / "model");
  optimizer.save(ckpt_dir / "optimizer");
  write_file_atomic(ckpt_dir / "run_config.json", c.to_json().dump(2) + "\n");
  write_curve(ckpt_dir / "curve.tsv", result.curve);
  result.checkpoint = ckpt_dir;
  result.provenance.checkpoint_sha256 = checkpoint_hash(ckpt_dir / "model");

  if (!part.eval.empty()) {
    const Evaluated ev = evaluate_model(final_model, part.eval, eval_inst, workers);
    result.report = ev.report;
    write_predictions(report_dir / "predictions.tsv", ev.predictions, c.gamma);
    if (nle_ptr != nullptr) result.llm_judgment_report = llm_judgment_score(part.eval, nle_index);
  }
  if (c.evaluate_train) result.train_report = evaluate_model(final_model, part.train, train_inst, workers).report;

  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_file_atomic(report_dir / "result.json", result.to_json().dump(2) + "\n");
  write_curve(report_dir / "curve.tsv", result.curve);
  spdlog::info("run {} finished in {:.1f}s: eval metric {:.4f}", c.run_name(), result.wall_time_s, result.metric());
  return result;
}

EvalReport evaluate_run(const fs::path& checkpoint, const RunConfig& config) {
  const RunConfig c = config.effective();
  c.validate();
  const fs::path model_dir = fs::exists(checkpoint / "model") ? checkpoint / "model" : checkpoint;
  const StanceModel model = StanceModel::load(model_dir);
  const TaskData data = load_task(c);
  std::vector<tscot::Explanation> nles;
  NleIndex nle_index;
  if (c.ablation != Ablation::NoTscot) {
    nles = load_nle_corpus(nle_corpus_dir(c), c);
    nle_index = index_nles(nles);
  }
  const NleIndex* nle_ptr = c.ablation == Ablation::NoTscot ? nullptr : &nle_index;
  const auto inst = build_instances(data.partition.eval, nle_ptr, c.gamma, model.tokenizer(), c.model.max_seq_len);
  const Evaluated ev = evaluate_model(model, data.partition.eval, inst, c.threads);
  const fs::path report_dir = c.paths.reports / c.run_name();
  fs::create_directories(report_dir);
  write_predictions(report_dir / "predictions.tsv", ev.predictions, c.gamma);
  json out = {{"report", ev.report.to_json()}, {"metric", primary_metric(ev.report, c.mode)}, {"checkpoint", checkpoint.string()}};
  if (nle_ptr != nullptr) {
    if (auto diag = llm_judgment_score(data.partition.eval, nle_index)) out["llm_judgment_only_diagnostic"] = diag->to_json();
  }
  write_file_atomic(report_dir / "eval.json", out.dump(2) + "\n");
  return ev.report;
}

std::vector<RunResult> run_ablations(const RunConfig& base, const Environment& env) {
  std::vector<RunResult> out;
  for (Ablation a : {Ablation::None, Ablation::NoTscot, Ablation::NoSenticnet}) {
    RunConfig c = base;
    c.ablation = a;
    out.push_back(train(c, env));
  }
  return out;
}

SweepResult gamma_sweep(const RunConfig& base, int gamma_lo, int gamma_hi, const Environment& env) {
  if (gamma_lo < tscot::kMinGamma || gamma_hi > tscot::kMaxGamma || gamma_lo > gamma_hi) {
    throw Error(ErrorCode::InvalidConfig, "gamma range must satisfy 1 <= lo <= hi <= 16");
  }
  SweepResult out;
  for (int g = gamma_lo; g <= gamma_hi; ++g) {
    RunConfig c = base;
    c.gamma = g;
    if (c.sweep_mode == SweepMode::Prefix) c.sweep_max_gamma = std::max(c.sweep_max_gamma, gamma_hi);
    out.results.push_back(train(c, env));
    out.series.emplace_back(g, out.results.back().metric());
  }
  return out;
}

BootstrapResult paired_bootstrap(std::span<const StanceLabel> gold, std::span<const StanceLabel> pred_a, std::span<const StanceLabel> pred_b,
                                 corpus::TaskMode mode, std::size_t resamples, std::uint64_t seed) {
  if (gold.size() != pred_a.size() || gold.size() != pred_b.size()) throw Error(ErrorCode::LengthMismatch, "bootstrap inputs differ in length");
  if (gold.empty()) throw Error(ErrorCode::EmptyInput, "bootstrap needs at least one example");
  if (resamples == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least one resample");
  auto metric = [&](std::span<const StanceLabel> g, std::span<const StanceLabel> p) { return primary_metric(corpus::evaluate(g, p), mode); };
  BootstrapResult r;
  r.resamples = resamples;
  r.delta = metric(gold, pred_b) - metric(gold, pred_a);
  Rng rng = Rng::stream(seed, "bootstrap");
  std::vector<StanceLabel> g(gold.size()), a(gold.size()), b(gold.size());
  std::size_t not_better = 0;
  for (std::size_t s = 0; s < resamples; ++s) {
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const auto k = static_cast<std::size_t>(rng.below(gold.size()));
      g[i] = gold[k];
      a[i] = pred_a[k];
      b[i] = pred_b[k];
    }
    if (metric(g, b) - metric(g, a) <= 0.0) ++not_better;
  }
  r.p_value = static_cast<double>(not_better) / static_cast<double>(resamples);
  return r;
}

}  // namespace mppt::harness

namespace mppt::harness {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::PartialCompletion:
      return 4;
    case ErrorCode::BackendUnavailable:
    case ErrorCode::CountMismatch:
    case ErrorCode::DuplicatePerspectives:
    case ErrorCode::EmptyExplanation:
      return 3;
    case ErrorCode::DivergenceDetected:
      return 1;
    default:
      return 2;
  }
}

}  // namespace mppt::harness
