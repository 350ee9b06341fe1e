#include "mppt/tokenizer.hpp"

#include <unicode/uchar.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "mppt/common.hpp"
#include "mppt/text.hpp"
#include "mppt/util.hpp"

namespace mppt {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;
const std::vector<std::string> kSpecialTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

// Whitespace and control classes follow the reference BERT tokenizer, which
// differ slightly from ICU's notion of white space.
bool bert_whitespace(char32_t cp) {
  if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r') return true;
  return u_charType(static_cast<UChar32>(cp)) == U_SPACE_SEPARATOR;
}

bool bert_control(char32_t cp) {
  if (cp == U'\t' || cp == U'\n' || cp == U'\r') return false;
  const auto type = u_charType(static_cast<UChar32>(cp));
  return type == U_CONTROL_CHAR || type == U_FORMAT_CHAR;
}

std::vector<std::string> split_on_whitespace(const std::vector<char32_t>& cps) {
  std::vector<std::string> out;
  std::string current;
  for (char32_t cp : cps) {
    if (cp == U' ') {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      text::append_utf8(current, cp);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

}  // namespace

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase)
    : vocab_(std::move(vocab)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], static_cast<int>(i));
  auto require = [&](const char* name) {
    auto id = token_id(name);
    if (!id) throw Error(ErrorCode::InvalidConfig, std::string("vocabulary lacks ") + name);
    return *id;
  };
  pad_id_ = require("[PAD]");
  unk_id_ = require("[UNK]");
  cls_id_ = require("[CLS]");
  sep_id_ = require("[SEP]");
  mask_id_ = require("[MASK]");
}

WordPieceTokenizer WordPieceTokenizer::load(const std::filesystem::path& vocab_txt, bool lowercase) {
  std::ifstream in(vocab_txt);
  if (!in) throw Error(ErrorCode::Io, "cannot open vocabulary " + vocab_txt.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

void WordPieceTokenizer::save(const std::filesystem::path& vocab_txt) const {
  std::string out;
  for (const auto& token : vocab_) out += token + "\n";
  write_file_atomic(vocab_txt, out);
}

std::optional<int> WordPieceTokenizer::token_id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view input) const {
  std::vector<char32_t> cleaned;
  for (char32_t cp : text::decode_utf8(input)) {
    if (cp == 0 || cp == 0xFFFD || bert_control(cp)) continue;
    if (bert_whitespace(cp)) {
      cleaned.push_back(U' ');
    } else if (text::is_cjk(cp)) {
      cleaned.push_back(U' ');
      cleaned.push_back(cp);
      cleaned.push_back(U' ');
    } else {
      cleaned.push_back(cp);
    }
  }

  std::vector<std::string> out;
  for (const auto& raw : split_on_whitespace(cleaned)) {
    const std::string word = lowercase_ ? text::lower_strip_accents(raw) : raw;
    std::string current;
    for (char32_t cp : text::decode_utf8(word)) {
      if (text::is_punctuation(cp)) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        std::string punct;
        text::append_utf8(punct, cp);
        out.push_back(std::move(punct));
      } else {
        text::append_utf8(current, cp);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  }
  return out;
}

std::vector<std::string> WordPieceTokenizer::wordpiece(std::string_view word) const {
  const auto cps = text::decode_utf8(word);
  if (cps.size() > kMaxCharsPerWord) return {"[UNK]"};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < cps.size()) {
    std::size_t end = cps.size();
    std::optional<std::string> match;
    while (start < end) {
      std::string candidate = start > 0 ? "##" : "";
      for (std::size_t i = start; i < end; ++i) text::append_utf8(candidate, cps[i]);
      if (ids_.count(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (!match) return {"[UNK]"};
    pieces.push_back(std::move(*match));
    start = end;
  }
  return pieces;
}

void WordPieceTokenizer::encode_segment(std::string_view segment, std::vector<int>& out) const {
  for (const auto& word : basic_tokenize(segment)) {
    for (const auto& piece : wordpiece(word)) out.push_back(ids_.at(piece));
  }
}

std::vector<int> WordPieceTokenizer::encode_pieces(std::string_view input) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= input.size()) {
    // Earliest special token literal at or after pos.
    std::size_t best = std::string_view::npos;
    const std::string* best_token = nullptr;
    for (const auto& special : kSpecialTokens) {
      const auto found = input.find(special, pos);
      if (found < best) {
        best = found;
        best_token = &special;
      }
    }
    if (best == std::string_view::npos) {
      encode_segment(input.substr(pos), out);
      break;
    }
    encode_segment(input.substr(pos, best - pos), out);
    out.push_back(ids_.at(*best_token));
    pos = best + best_token->size();
  }
  return out;
}

std::vector<int> WordPieceTokenizer::encode(std::string_view input) const {
  std::vector<int> out;
  out.push_back(cls_id_);
  auto pieces = encode_pieces(input);
  out.insert(out.end(), pieces.begin(), pieces.end());
  out.push_back(sep_id_);
  return out;
}

std::vector<std::string> build_wordpiece_vocab(std::span<const std::string> corpus, std::span<const std::string> required_words,
                                               std::size_t max_size, bool lowercase) {
  // A throwaway tokenizer for the basic (pre-WordPiece) split.
  const WordPieceTokenizer splitter(kSpecialTokens, lowercase);
  std::map<std::string, std::size_t> counts;
  std::set<std::string> chars;
  auto add_chars = [&](const std::string& word) {
    for (char32_t cp : text::decode_utf8(word)) {
      std::string c;
      text::append_utf8(c, cp);
      chars.insert(c);
    }
  };
  for (const auto& line : corpus) {
    for (const auto& word : splitter.basic_tokenize(line)) {
      ++counts[word];
      add_chars(word);
    }
  }
  std::vector<std::string> required;
  for (const auto& w : required_words) {
    for (const auto& word : splitter.basic_tokenize(w)) {
      required.push_back(word);
      add_chars(word);
    }
  }

  std::vector<std::string> vocab = kSpecialTokens;
  std::set<std::string> present(vocab.begin(), vocab.end());
  auto add = [&](const std::string& token) {
    if (present.insert(token).second) vocab.push_back(token);
  };
  for (const auto& c : chars) add(c);
  for (const auto& c : chars) add("##" + c);
  for (const auto& w : required) add(w);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= max_size) break;
    add(word);
  }
  return vocab;
}

}  // namespace mppt
