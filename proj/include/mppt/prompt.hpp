#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "mppt/corpus.hpp"
#include "mppt/tokenizer.hpp"
#include "mppt/tscot.hpp"

namespace mppt::multipln {

struct TruncationReport {
  std::size_t chars_dropped_from_x = 0;
  std::size_t chars_dropped_from_k = 0;
  bool truncated() const { return chars_dropped_from_x > 0 || chars_dropped_from_k > 0; }
};

struct PromptInstance {
  std::string example_id;
  int perspective_index = 0;
  std::string filled_text;
  std::vector<int> token_ids;  // [CLS] ... [SEP]
  int mask_position = 0;
  TruncationReport truncation;
};

// "{x}. From the perspective of {p} and {k}. The attitude to {q} is [MASK]."
std::string fill_template(std::string_view x, std::string_view perspective, std::string_view nle, std::string_view target);
// "{x}. The attitude to {q} is [MASK]."
std::string fill_reduced_template(std::string_view x, std::string_view target);

// Builds the perspective prompt, or the reduced one when nle is null. When
// the tokenized prompt exceeds budget, the explanation is tail-trimmed at
// word boundaries first, then the input text. Throws BudgetTooSmall when
// the scaffold with target and mask alone does not fit.
PromptInstance build_prompt(const corpus::Example& x, const tscot::Explanation* nle, const WordPieceTokenizer& tokenizer,
                            int budget);

}  // namespace mppt::multipln
