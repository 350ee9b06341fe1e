#include "mppt/config.hpp"

#include "mppt/common.hpp"
#include "mppt/text.hpp"
#include "mppt/tscot.hpp"
#include "mppt/util.hpp"

namespace mppt::harness {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "NONE";
    case Ablation::NoTscot: return "NO_TSCOT";
    case Ablation::NoSenticnet: return "NO_SENTICNET";
  }
  return "NONE";
}

Ablation parse_ablation(std::string_view s) {
  std::string u(s);
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  std::replace(u.begin(), u.end(), '-', '_');
  if (u == "NONE") return Ablation::None;
  if (u == "NO_TSCOT" || u == "WO_T") return Ablation::NoTscot;
  if (u == "NO_SENTICNET" || u == "WO_S") return Ablation::NoSenticnet;
  throw Error(ErrorCode::InvalidConfig, "unknown ablation '" + std::string(s) + "'");
}

std::string_view to_string(SweepMode m) { return m == SweepMode::Fresh ? "fresh" : "prefix"; }

SweepMode parse_sweep_mode(std::string_view s) {
  const std::string l = text::to_lower(s);
  if (l == "fresh") return SweepMode::Fresh;
  if (l == "prefix") return SweepMode::Prefix;
  throw Error(ErrorCode::InvalidConfig, "unknown sweep mode '" + std::string(s) + "'");
}

RunConfig RunConfig::effective() const {
  RunConfig c = *this;
  if (c.ablation == Ablation::NoTscot) c.gamma = 1;
  if (c.ablation == Ablation::NoSenticnet) c.verbalizer.expansion_limit = 0;
  if (c.backbone_id.empty()) c.backbone_id = c.backbone.filename().string();
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (gamma < tscot::kMinGamma || gamma > tscot::kMaxGamma) fail("gamma must be in [1, 16]");
  if (optimizer.name != "AdamW") fail("only the AdamW optimizer is supported");
  if (!(optimizer.lr >= 0.0)) fail("lr must be >= 0");
  if (optimizer.batch_size < 1) fail("batch_size must be positive");
  if (optimizer.epochs < 1) fail("epochs must be positive");
  if (optimizer.max_steps < 0) fail("max_steps must be >= 0");
  if (verbalizer.expansion_limit < 0) fail("expansion_limit must be >= 0");
  if (verbalizer.expansion_limit > 0 && ablation != Ablation::NoSenticnet && verbalizer.lexicon.empty()) {
    fail("expansion_limit > 0 needs a lexicon path");
  }
  if (backbone.empty()) fail("backbone path is required");
  if (paths.data.empty()) fail("at least one dataset manifest is required");
  if (mode == corpus::TaskMode::CrossTarget) {
    if (source_targets.empty() != dest_targets.empty()) fail("explicit cross-target tasks need both source_targets and dest_targets");
    if (source_targets.empty() && !corpus::find_standard_task(task)) fail("unknown task '" + task + "'");
  }
  if (threads < 1) fail("threads must be positive");
  if (llm_parallelism < 1) fail("llm_parallelism must be positive");
  if (sweep_mode == SweepMode::Prefix && sweep_max_gamma < gamma) fail("sweep_max_gamma must be >= gamma");
  if (ablation != Ablation::NoTscot) llm.validate();
}

corpus::TaskSpec RunConfig::task_spec() const {
  if (!source_targets.empty() || mode == corpus::TaskMode::ZeroShot) return {task, source_targets, dest_targets, mode};
  auto spec = corpus::find_standard_task(task);
  if (!spec) throw Error(ErrorCode::InvalidConfig, "unknown task '" + task + "'");
  return *spec;
}

std::string RunConfig::run_name() const {
  std::string slug;
  for (char c : task) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      slug += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!slug.empty() && slug.back() != '-') {
      slug += '-';
    }
  }
  while (!slug.empty() && slug.back() == '-') slug.pop_back();
  if (slug.empty()) slug = "task";
  std::string ab = text::to_lower(to_string(ablation));
  std::replace(ab.begin(), ab.end(), '_', '-');
  return slug + "_g" + std::to_string(effective().gamma) + "_" + ab + "_s" + std::to_string(seed);
}

json RunConfig::to_json() const {
  json data = json::array();
  for (const auto& p : paths.data) data.push_back(p.string());
  return {{"task", task},
          {"source_targets", source_targets},
          {"dest_targets", dest_targets},
          {"mode", corpus::to_string(mode)},
          {"gamma", gamma},
          {"ablation", to_string(ablation)},
          {"seed", seed},
          {"optimizer",
           {{"name", optimizer.name},
            {"lr", optimizer.lr},
            {"batch_size", optimizer.batch_size},
            {"epochs", optimizer.epochs},
            {"max_steps", optimizer.max_steps},
            {"weight_decay", optimizer.weight_decay},
            {"max_grad_norm", optimizer.max_grad_norm}}},
          {"backbone", backbone.string()},
          {"backbone_id", backbone_id},
          {"paths",
           {{"data", data},
            {"cache", paths.cache.string()},
            {"nle_corpus", paths.nle_corpus.string()},
            {"checkpoints", paths.checkpoints.string()},
            {"reports", paths.reports.string()}}},
          {"llm", llm.to_json()},
          {"llm_parallelism", llm_parallelism},
          {"model", model.to_json()},
          {"verbalizer", {{"lexicon", verbalizer.lexicon.string()}, {"expansion_limit", verbalizer.expansion_limit}}},
          {"threads", threads},
          {"sweep_mode", to_string(sweep_mode)},
          {"sweep_max_gamma", sweep_max_gamma},
          {"evaluate_train", evaluate_train}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  static const std::vector<std::string> known = {"task",      "source_targets", "dest_targets",    "mode",         "gamma",
                                                 "ablation",  "seed",           "optimizer",       "backbone",     "backbone_id",
                                                 "paths",     "llm",            "llm_parallelism", "model",        "verbalizer",
                                                 "threads",   "sweep_mode",     "sweep_max_gamma", "evaluate_train"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw Error(ErrorCode::InvalidConfig, "unknown config field '" + key + "'");
  }
  try {
    RunConfig c;
    c.task = j.value("task", c.task);
    c.source_targets = j.value("source_targets", c.source_targets);
    c.dest_targets = j.value("dest_targets", c.dest_targets);
    if (j.contains("mode")) {
      const auto mode = corpus::parse_task_mode(j.at("mode").get<std::string>());
      if (!mode) throw Error(ErrorCode::InvalidConfig, "unknown task mode");
      c.mode = *mode;
    }
    c.gamma = j.value("gamma", c.gamma);
    c.ablation = parse_ablation(j.value("ablation", std::string("NONE")));
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.name = o.value("name", c.optimizer.name);
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
      c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
      c.optimizer.max_steps = o.value("max_steps", c.optimizer.max_steps);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
      c.optimizer.max_grad_norm = o.value("max_grad_norm", c.optimizer.max_grad_norm);
    }
    c.backbone = resolve(j.value("backbone", std::string()));
    c.backbone_id = j.value("backbone_id", std::string());
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      for (const auto& d : p.value("data", std::vector<std::string>{})) c.paths.data.push_back(resolve(d));
      c.paths.cache = resolve(p.value("cache", c.paths.cache.string()));
      c.paths.nle_corpus = resolve(p.value("nle_corpus", c.paths.nle_corpus.string()));
      c.paths.checkpoints = resolve(p.value("checkpoints", c.paths.checkpoints.string()));
      c.paths.reports = resolve(p.value("reports", c.paths.reports.string()));
    } else {
      c.paths.cache = resolve(c.paths.cache.string());
      c.paths.nle_corpus = resolve(c.paths.nle_corpus.string());
      c.paths.checkpoints = resolve(c.paths.checkpoints.string());
      c.paths.reports = resolve(c.paths.reports.string());
    }
    if (j.contains("llm")) {
      c.llm = tscot::LlmBackendConfig::from_json(j.at("llm"));
      c.llm.fixtures_dir = resolve(c.llm.fixtures_dir.string());
    }
    c.llm_parallelism = j.value("llm_parallelism", c.llm_parallelism);
    if (j.contains("model")) c.model = multipln::ModelOptions::from_json(j.at("model"));
    if (j.contains("verbalizer")) {
      const auto& v = j.at("verbalizer");
      c.verbalizer.lexicon = resolve(v.value("lexicon", std::string()));
      c.verbalizer.expansion_limit = v.value("expansion_limit", c.verbalizer.expansion_limit);
    }
    c.threads = j.value("threads", c.threads);
    c.sweep_mode = parse_sweep_mode(j.value("sweep_mode", std::string("fresh")));
    c.sweep_max_gamma = j.value("sweep_max_gamma", c.sweep_max_gamma);
    c.evaluate_train = j.value("evaluate_train", c.evaluate_train);
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed run config: ") + e.what());
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

}  // namespace mppt::harness
