#include "mppt/verbalizer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>

#include "mppt/delimited.hpp"
#include "mppt/text.hpp"
#include "mppt/util.hpp"

namespace mppt::verbalizer {

using nlohmann::json;

Lexicon parse_lexicon(std::string_view content) {
  Lexicon out;
  const auto records = parse_delimited(content, '\t', '\0');
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& fields = records[r].fields;
    if (fields.empty()) continue;
    LexiconEntry entry;
    entry.word = text::to_lower(text::normalize(fields[0]));
    if (entry.word.empty()) continue;
    std::set<std::string> seen{entry.word};
    if (fields.size() > 1) {
      std::size_t start = 0;
      const std::string& list = fields[1];
      while (start <= list.size()) {
        const auto comma = std::min(list.find(',', start), list.size());
        std::string word = list.substr(start, comma - start);
        start = comma + 1;
        std::replace(word.begin(), word.end(), '_', ' ');
        word = text::to_lower(text::normalize(word));
        if (!word.empty() && seen.insert(word).second) entry.related.push_back(word);
      }
    }
    out[entry.word] = std::move(entry);
  }
  return out;
}

Lexicon load_lexicon(const std::filesystem::path& path) { return parse_lexicon(read_file(path)); }

std::optional<StanceLabel> Verbalizer::label_of(std::string_view word) const {
  for (StanceLabel label : kAllLabels) {
    const auto& set = of(label);
    if (std::find(set.begin(), set.end(), word) != set.end()) return label;
  }
  return std::nullopt;
}

std::size_t Verbalizer::size() const {
  std::size_t n = 0;
  for (const auto& set : words) n += set.size();
  return n;
}

json Verbalizer::to_json() const {
  json j;
  j["expansion_limit"] = expansion_limit;
  for (StanceLabel label : kAllLabels) j["words"][to_string(label)] = of(label);
  return j;
}

Verbalizer base_verbalizer() {
  Verbalizer v;
  for (StanceLabel label : kAllLabels) v.words[index_of(label)] = {std::string(base_word(label))};
  return v;
}

Verbalizer expand(const Verbalizer& v, const Lexicon& lexicon, int limit) {
  if (limit < 0) throw Error(ErrorCode::InvalidArgument, "expansion limit must be >= 0");
  Verbalizer out = v;
  out.expansion_limit = limit;
  if (limit == 0) return out;
  std::set<std::string> claimed;
  for (const auto& set : v.words) claimed.insert(set.begin(), set.end());
  for (StanceLabel label : kAllLabels) {
    const std::string base(base_word(label));
    const auto it = lexicon.find(base);
    if (it == lexicon.end()) {
      spdlog::warn("lexicon has no entry for '{}'; label {} left unexpanded", base, to_string(label));
      continue;
    }
    int added = 0;
    for (const auto& candidate : it->second.related) {
      if (added >= limit) break;
      if (!claimed.insert(candidate).second) continue;
      out.words[index_of(label)].push_back(candidate);
      ++added;
    }
  }
  return out;
}

std::vector<StanceLabel> MaterializedVerbalizer::labels() const {
  std::vector<StanceLabel> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(u.label);
  return out;
}

std::size_t MaterializedVerbalizer::count(StanceLabel label) const {
  return static_cast<std::size_t>(std::count_if(units.begin(), units.end(), [&](const WordUnit& u) { return u.label == label; }));
}

json MaterializedVerbalizer::to_json(const WordPieceTokenizer& tokenizer) const {
  json j = json::object();
  for (StanceLabel label : kAllLabels) j[to_string(label)] = json::array();
  for (const auto& u : units) {
    std::vector<std::string> pieces;
    for (int id : u.token_ids) pieces.push_back(tokenizer.token(id));
    j[to_string(u.label)].push_back({{"word", u.word}, {"token_ids", u.token_ids}, {"pieces", pieces}});
  }
  return j;
}

MaterializedVerbalizer materialize(const Verbalizer& v, const WordPieceTokenizer& tokenizer) {
  MaterializedVerbalizer out;
  std::set<std::vector<int>> used;
  for (StanceLabel label : kAllLabels) {
    for (const auto& word : v.of(label)) {
      auto ids = tokenizer.encode_pieces(word);
      const bool all_unknown = std::all_of(ids.begin(), ids.end(), [&](int id) { return id == tokenizer.unk_id(); });
      if (ids.empty() || all_unknown) {
        spdlog::warn("label word '{}' ({}) is unknown to the tokenizer; dropped", word, to_string(label));
        continue;
      }
      if (!used.insert(ids).second) {
        spdlog::warn("label word '{}' ({}) duplicates an earlier unit's pieces; dropped", word, to_string(label));
        continue;
      }
      out.units.push_back({word, label, std::move(ids)});
    }
    if (out.count(label) == 0) {
      throw Error(ErrorCode::LabelEmptied, "every label word of " + std::string(to_string(label)) + " was dropped");
    }
  }
  return out;
}

std::string to_string(Aggregation a) { return a == Aggregation::Sum ? "sum" : "mean"; }

Aggregation parse_aggregation(std::string_view s) {
  const std::string lower = text::to_lower(s);
  if (lower == "sum") return Aggregation::Sum;
  if (lower == "mean") return Aggregation::Mean;
  throw Error(ErrorCode::InvalidConfig, "unknown aggregation '" + std::string(s) + "'");
}

}  // namespace mppt::verbalizer
