#include "mppt/prompt.hpp"

#include <algorithm>
#include <functional>

#include "mppt/common.hpp"
#include "mppt/text.hpp"

namespace mppt::multipln {

std::string fill_template(std::string_view x, std::string_view perspective, std::string_view nle, std::string_view target) {
  std::string out;
  out.reserve(x.size() + perspective.size() + nle.size() + target.size() + 64);
  out.append(x).append(". From the perspective of ").append(perspective).append(" and ").append(nle);
  out.append(". The attitude to ").append(target).append(" is [MASK].");
  return out;
}

std::string fill_reduced_template(std::string_view x, std::string_view target) {
  std::string out(x);
  out.append(". The attitude to ").append(target).append(" is [MASK].");
  return out;
}

namespace {

// Byte offsets just past each whitespace-separated word.
std::vector<std::size_t> word_ends(std::string_view s) {
  std::vector<std::size_t> ends;
  bool in_word = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool space = s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r';
    if (!space) in_word = true;
    if (space && in_word) {
      ends.push_back(i);
      in_word = false;
    }
  }
  if (in_word) ends.push_back(s.size());
  return ends;
}

// Longest word-prefix of s for which fits(prefix) holds; token length is
// monotone in the number of kept words, so binary search applies.
std::string longest_fitting_prefix(std::string_view s, const std::function<bool(std::string_view)>& fits) {
  const auto ends = word_ends(s);
  if (fits(s)) return std::string(s);
  std::size_t lo = 0;  // words known to fit
  std::size_t hi = ends.size();
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (fits(s.substr(0, ends[mid - 1]))) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo == 0 ? std::string() : std::string(s.substr(0, ends[lo - 1]));
}

// Special-token literals inside user content would add extra masks or
// separators; their brackets are dropped.
std::string defuse_specials(std::string s) {
  for (std::string_view special : {"[MASK]", "[CLS]", "[SEP]", "[PAD]", "[UNK]"}) {
    std::size_t pos = 0;
    while ((pos = s.find(special, pos)) != std::string::npos) {
      s.replace(pos, special.size(), special.substr(1, special.size() - 2));
    }
  }
  return s;
}

}  // namespace

PromptInstance build_prompt(const corpus::Example& x, const tscot::Explanation* nle, const WordPieceTokenizer& tokenizer,
                            int budget) {
  const std::string perspective = defuse_specials(nle != nullptr ? nle->perspective : std::string());
  const std::string target = defuse_specials(x.target);
  const std::string full_x = defuse_specials(x.text);
  auto render = [&](std::string_view xs, std::string_view ks) {
    return nle != nullptr ? fill_template(xs, perspective, ks, target) : fill_reduced_template(xs, target);
  };
  auto length = [&](std::string_view xs, std::string_view ks) { return static_cast<int>(tokenizer.encode(render(xs, ks)).size()); };

  const std::string full_k = defuse_specials(nle != nullptr ? nle->text : std::string());
  if (length("", "") > budget) {
    throw Error(ErrorCode::BudgetTooSmall, "prompt scaffold for example " + x.id + " needs more than " + std::to_string(budget) + " tokens");
  }

  std::string kept_x = full_x;
  std::string kept_k = full_k;
  if (length(kept_x, kept_k) > budget) {
    kept_k = longest_fitting_prefix(full_k, [&](std::string_view k) { return length(kept_x, k) <= budget; });
    if (length(kept_x, kept_k) > budget) {
      kept_k.clear();
      kept_x = longest_fitting_prefix(full_x, [&](std::string_view xs) { return length(xs, kept_k) <= budget; });
    }
  }

  PromptInstance out;
  out.example_id = x.id;
  out.perspective_index = nle != nullptr ? nle->perspective_index : 0;
  out.filled_text = render(kept_x, kept_k);
  out.token_ids = tokenizer.encode(out.filled_text);
  out.truncation.chars_dropped_from_k = text::codepoint_count(full_k) - text::codepoint_count(kept_k);
  out.truncation.chars_dropped_from_x = text::codepoint_count(full_x) - text::codepoint_count(kept_x);

  const auto mask_count = std::count(out.token_ids.begin(), out.token_ids.end(), tokenizer.mask_id());
  if (mask_count != 1) {
    throw Error(ErrorCode::InvalidArgument, "prompt for example " + x.id + " contains " + std::to_string(mask_count) + " mask tokens");
  }
  out.mask_position = static_cast<int>(std::find(out.token_ids.begin(), out.token_ids.end(), tokenizer.mask_id()) - out.token_ids.begin());
  return out;
}

}  // namespace mppt::multipln
