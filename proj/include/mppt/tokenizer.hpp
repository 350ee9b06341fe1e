#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mppt {

// BERT-style tokenizer: basic tokenization (control-char cleanup, CJK
// spacing, optional lower-casing with accent stripping, punctuation
// splitting) followed by greedy longest-match-first WordPiece. Special
// tokens written literally in the text ("[MASK]") are kept whole.
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase = true);

  static WordPieceTokenizer load(const std::filesystem::path& vocab_txt, bool lowercase = true);
  void save(const std::filesystem::path& vocab_txt) const;

  std::vector<std::string> basic_tokenize(std::string_view text) const;
  std::vector<std::string> wordpiece(std::string_view word) const;

  // Pieces for arbitrary text, no [CLS]/[SEP].
  std::vector<int> encode_pieces(std::string_view text) const;
  // [CLS] pieces [SEP]
  std::vector<int> encode(std::string_view text) const;

  std::optional<int> token_id(std::string_view token) const;
  const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  bool lowercase() const { return lowercase_; }

  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }
  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int mask_id() const { return mask_id_; }

  static constexpr std::string_view kMaskToken = "[MASK]";

 private:
  void encode_segment(std::string_view text, std::vector<int>& out) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  bool lowercase_;
  int pad_id_ = 0;
  int unk_id_ = 0;
  int cls_id_ = 0;
  int sep_id_ = 0;
  int mask_id_ = 0;
};

// Vocabulary for a fresh backbone: the five special tokens, every character
// seen (whole and "##" continuation), the required words, then the most
// frequent corpus words until max_size is reached. Deterministic.
std::vector<std::string> build_wordpiece_vocab(std::span<const std::string> corpus, std::span<const std::string> required_words,
                                               std::size_t max_size, bool lowercase = true);

}  // namespace mppt
