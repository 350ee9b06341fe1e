#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mppt/corpus.hpp"

// Desk-scale cross-target task with lexical stance cues, plus matching MOCK
// LLM rules and a masked-LM pretraining corpus drawn from the same language.
namespace mppt::synthetic {

struct TaskOptions {
  std::string source_target = "Solar Energy";
  std::string dest_target = "Wind Power";
  std::size_t per_target = 32;
  std::uint64_t seed = 0;
};

std::vector<corpus::Example> make_examples(const TaskOptions& options);

// Eight analysis angles returned by the mock for every target.
const std::vector<std::string>& perspectives();

struct TaskFiles {
  std::filesystem::path manifest;   // dataset manifest (data.csv beside it)
  std::filesystem::path mock_llm;   // directory of MOCK rule files
};

// Writes data/synthetic.csv, data/synthetic.json and mock_llm/rules.json.
TaskFiles write_task(const std::filesystem::path& dir, const TaskOptions& options);

// Sentences for backbone pretraining: tweets about many targets, prompt-style
// sentences and lexicon-style paraphrases of the label words.
std::vector<std::string> pretraining_corpus(std::size_t sentences, std::uint64_t seed);

}  // namespace mppt::synthetic
