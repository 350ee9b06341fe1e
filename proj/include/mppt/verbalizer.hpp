#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mppt/common.hpp"
#include "mppt/tokenizer.hpp"

namespace mppt::verbalizer {

struct LexiconEntry {
  std::string word;
  std::vector<std::string> related;  // most related first, never contains word
};

using Lexicon = std::map<std::string, LexiconEntry>;

// Rows "word<TAB>related1,related2,..." after a header line. Underscores in
// related terms become spaces; the head word is removed from its own list.
Lexicon load_lexicon(const std::filesystem::path& path);
Lexicon parse_lexicon(std::string_view content);

// Label words per label, in insertion order. Sets are pairwise disjoint and
// each contains its label's base word.
struct Verbalizer {
  std::array<std::vector<std::string>, kNumLabels> words;
  int expansion_limit = 0;

  const std::vector<std::string>& of(StanceLabel label) const { return words[index_of(label)]; }
  std::optional<StanceLabel> label_of(std::string_view word) const;
  std::size_t size() const;
  nlohmann::json to_json() const;
};

Verbalizer base_verbalizer();

// Adds up to `limit` related words per label in lexicon order. A candidate
// already present under any label is skipped; labels are processed
// FAVOR, AGAINST, NONE so earlier labels win collisions.
Verbalizer expand(const Verbalizer& v, const Lexicon& lexicon, int limit);

// One embedding-addressable label word: a single token id, or several ids
// whose embeddings are averaged.
struct WordUnit {
  std::string word;
  StanceLabel label;
  std::vector<int> token_ids;
};

struct MaterializedVerbalizer {
  std::vector<WordUnit> units;  // grouped by label, FAVOR first

  std::vector<StanceLabel> labels() const;
  std::size_t count(StanceLabel label) const;
  nlohmann::json to_json(const WordPieceTokenizer& tokenizer) const;
};

// Drops words that tokenize to unknown pieces only and words whose piece
// sequence repeats an earlier unit. Throws LabelEmptied if a label loses
// every word.
MaterializedVerbalizer materialize(const Verbalizer& v, const WordPieceTokenizer& tokenizer);

enum class Aggregation { Sum, Mean };

std::string to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view s);

// Label probabilities from unit probabilities. Sum adds each label's units;
// Mean averages them and renormalizes over labels.
template <typename T>
std::array<T, kNumLabels> aggregate_mu(std::span<const T> delta, std::span<const StanceLabel> unit_labels, Aggregation mode = Aggregation::Sum) {
  std::array<T, kNumLabels> out{};
  std::array<std::size_t, kNumLabels> counts{};
  for (std::size_t i = 0; i < delta.size(); ++i) {
    out[index_of(unit_labels[i])] += delta[i];
    ++counts[index_of(unit_labels[i])];
  }
  if (mode == Aggregation::Mean) {
    T total = 0;
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      if (counts[c] > 0) out[c] /= static_cast<T>(counts[c]);
      total += out[c];
    }
    if (total > 0) {
      for (auto& x : out) x /= total;
    }
  }
  return out;
}

}  // namespace mppt::verbalizer
