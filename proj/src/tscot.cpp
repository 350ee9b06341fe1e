#include "mppt/tscot.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <set>
#include <thread>

#include "mppt/delimited.hpp"
#include "mppt/text.hpp"
#include "mppt/util.hpp"

namespace mppt::tscot {

using nlohmann::json;

namespace {

constexpr std::string_view kS1Prefix = "From what angles do you think people might state their stance on the ";
constexpr std::string_view kS1Middle = ". List the ";
constexpr std::string_view kS1Suffix = " angles you can think of.";

constexpr std::string_view kS2Prefix = "Oriented to the ";
constexpr std::string_view kS2Input = ", given the input ";
constexpr std::string_view kS2Perspective = ", and under the ";
constexpr std::string_view kS2Suffix =
    ", give the stance analysis thinking or explanation. Give a positional judgment (favor,against,none) at the end.";

bool ascii_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool has_content(std::string_view s) {
  for (char c : s) {
    if (ascii_alnum(c) || static_cast<unsigned char>(c) >= 0x80) return true;
  }
  return false;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    std::string_view line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

// Returns the item body when `line` starts with a list marker.
std::optional<std::string_view> list_item_body(std::string_view line) {
  line = ltrim(line);
  if (line.empty()) return std::nullopt;

  static const std::vector<std::string_view> bullets = {"- ", "* ", "+ ", "\xE2\x80\xA2 ", "\xE2\x80\x93 ", "\xE2\x80\x94 "};
  for (auto bullet : bullets) {
    if (line.substr(0, bullet.size()) == bullet) return ltrim(line.substr(bullet.size()));
  }

  std::size_t i = 0;
  const bool parenthesized = line[0] == '(';
  if (parenthesized) ++i;
  const std::size_t digits_start = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits_start || i - digits_start > 3 || i >= line.size()) return std::nullopt;
  if (parenthesized) {
    if (line[i] != ')') return std::nullopt;
  } else if (line[i] != '.' && line[i] != ')' && line[i] != ':') {
    return std::nullopt;
  }
  ++i;
  if (i < line.size() && line[i] != ' ' && line[i] != '\t') return std::nullopt;
  return ltrim(line.substr(i));
}

std::string clean_item(std::string_view body) {
  std::string item;
  item.reserve(body.size());
  // Markdown emphasis markers carry no content.
  for (std::size_t i = 0; i < body.size(); ++i) {
    if ((body[i] == '*' || body[i] == '_') && i + 1 < body.size() && body[i + 1] == body[i]) {
      ++i;
      continue;
    }
    item.push_back(body[i]);
  }
  if (auto colon = item.find(':'); colon != std::string::npos) item.resize(colon);
  for (std::string_view dash : {" - ", " \xE2\x80\x93 ", " \xE2\x80\x94 "}) {
    if (auto pos = item.find(dash); pos != std::string::npos) item.resize(pos);
  }
  auto strip = [](char c) {
    return c == '.' || c == ',' || c == ';' || c == '!' || c == '?' || c == ' ' || c == '\t' || c == '"' ||
           c == '\'' || c == '*';
  };
  while (!item.empty() && strip(item.back())) item.pop_back();
  std::size_t lead = 0;
  while (lead < item.size() && (item[lead] == ' ' || item[lead] == '"' || item[lead] == '\'')) ++lead;
  return item.substr(lead);
}

struct Span {
  std::size_t begin;
  std::size_t end;
};

// Sentence spans over the raw bytes; terminators are . ! ? and line breaks.
std::vector<Span> sentence_spans(std::string_view s) {
  std::vector<Span> spans;
  std::size_t start = 0;
  std::size_t i = 0;
  auto terminator = [](char c) { return c == '.' || c == '!' || c == '?' || c == '\n'; };
  while (i < s.size()) {
    if (!terminator(s[i])) {
      ++i;
      continue;
    }
    while (i < s.size() && (terminator(s[i]) || s[i] == '"' || s[i] == '\'' || s[i] == ')' || s[i] == '\r')) ++i;
    if (has_content(s.substr(start, i - start))) spans.push_back({start, i});
    start = i;
  }
  if (start < s.size() && has_content(s.substr(start))) spans.push_back({start, s.size()});
  return spans;
}

std::optional<StanceLabel> last_judgment_word(std::string_view sentence) {
  static const std::vector<std::pair<std::string_view, StanceLabel>> words = {
      {"favor", StanceLabel::Favor},     {"favour", StanceLabel::Favor},  {"pro", StanceLabel::Favor},
      {"against", StanceLabel::Against}, {"con", StanceLabel::Against},   {"none", StanceLabel::None},
      {"neutral", StanceLabel::None},
  };
  const std::string lower = ascii_lower(sentence);
  std::optional<StanceLabel> found;
  std::size_t found_at = 0;
  for (const auto& [word, label] : words) {
    std::size_t pos = 0;
    while ((pos = lower.find(word, pos)) != std::string::npos) {
      const bool left_ok = pos == 0 || !ascii_alnum(lower[pos - 1]);
      const std::size_t after = pos + word.size();
      const bool right_ok = after >= lower.size() || !ascii_alnum(lower[after]);
      if (left_ok && right_ok && (!found || pos >= found_at)) {
        found = label;
        found_at = pos;
      }
      pos = after;
    }
  }
  return found;
}

}  // namespace

std::string build_s1(std::string_view target, int gamma) {
  std::string out;
  out.append(kS1Prefix).append(target).append(kS1Middle).append(std::to_string(gamma)).append(kS1Suffix);
  return out;
}

std::string build_s2(std::string_view target, std::string_view text, std::string_view perspective) {
  std::string out;
  out.append(kS2Prefix).append(target).append(kS2Input).append(text).append(kS2Perspective).append(perspective).append(kS2Suffix);
  return out;
}

std::string recount_suffix(int gamma) { return " Return exactly " + std::to_string(gamma) + " numbered items."; }

std::optional<S1Slots> parse_s1(std::string_view instruction) {
  if (instruction.substr(0, kS1Prefix.size()) != kS1Prefix) return std::nullopt;
  const auto suffix_pos = instruction.rfind(kS1Suffix);
  const auto middle_pos = instruction.rfind(kS1Middle, suffix_pos);
  if (suffix_pos == std::string_view::npos || middle_pos == std::string_view::npos || middle_pos < kS1Prefix.size()) {
    return std::nullopt;
  }
  S1Slots slots;
  slots.target = std::string(instruction.substr(kS1Prefix.size(), middle_pos - kS1Prefix.size()));
  const auto digits = instruction.substr(middle_pos + kS1Middle.size(), suffix_pos - middle_pos - kS1Middle.size());
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), slots.gamma);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return slots;
}

std::optional<S2Slots> parse_s2(std::string_view instruction) {
  if (instruction.substr(0, kS2Prefix.size()) != kS2Prefix) return std::nullopt;
  if (instruction.size() < kS2Suffix.size() || instruction.substr(instruction.size() - kS2Suffix.size()) != kS2Suffix) {
    return std::nullopt;
  }
  const std::string_view body = instruction.substr(kS2Prefix.size(), instruction.size() - kS2Prefix.size() - kS2Suffix.size());
  const auto input_pos = body.find(kS2Input);
  const auto persp_pos = body.rfind(kS2Perspective);
  if (input_pos == std::string_view::npos || persp_pos == std::string_view::npos || persp_pos < input_pos + kS2Input.size()) {
    return std::nullopt;
  }
  S2Slots slots;
  slots.target = std::string(body.substr(0, input_pos));
  slots.input = std::string(body.substr(input_pos + kS2Input.size(), persp_pos - input_pos - kS2Input.size()));
  slots.perspective = std::string(body.substr(persp_pos + kS2Perspective.size()));
  return slots;
}

std::vector<std::string> parse_perspectives(std::string_view response, int gamma) {
  std::vector<std::string> items;
  for (auto line : split_lines(response)) {
    auto body = list_item_body(line);
    if (!body) continue;
    std::string item = clean_item(*body);
    if (!item.empty()) items.push_back(std::move(item));
  }
  if (gamma < 1 || static_cast<int>(items.size()) < gamma) {
    throw Error(ErrorCode::CountMismatch,
                "expected " + std::to_string(gamma) + " perspectives, found " + std::to_string(items.size()));
  }
  items.resize(static_cast<std::size_t>(gamma));
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (!seen.insert(text::fold_key(item)).second) {
      throw Error(ErrorCode::DuplicatePerspectives, "perspective '" + item + "' listed twice");
    }
  }
  return items;
}

ParsedExplanation parse_explanation(std::string_view response) {
  const auto spans = sentence_spans(response);
  if (spans.empty()) throw Error(ErrorCode::EmptyExplanation, "response has no text");

  const std::size_t first_candidate = spans.size() >= 2 ? spans.size() - 2 : 0;
  for (std::size_t s = spans.size(); s-- > first_candidate;) {
    const Span span = spans[s];
    auto judgment = last_judgment_word(response.substr(span.begin, span.end - span.begin));
    if (!judgment) continue;
    std::string rest(response.substr(0, span.begin));
    rest.append(response.substr(span.end));
    rest = text::trim(rest);
    if (!has_content(rest)) throw Error(ErrorCode::EmptyExplanation, "response holds only a judgment");
    return {rest, judgment};
  }
  return {text::trim(response), std::nullopt};
}

json PerspectiveSet::to_json() const {
  return {{"target", target}, {"gamma", gamma}, {"perspectives", perspectives}, {"provenance", provenance}};
}

PerspectiveSet PerspectiveSet::from_json(const json& j) {
  PerspectiveSet p;
  p.target = j.at("target").get<std::string>();
  p.gamma = j.at("gamma").get<int>();
  p.perspectives = j.at("perspectives").get<std::vector<std::string>>();
  p.provenance = j.value("provenance", std::vector<std::string>{});
  return p;
}

CachedLlm::CachedLlm(LlmBackend& backend, const ResponseCache& cache, LlmBackendConfig config)
    : backend_(backend), cache_(cache), config_(std::move(config)) {}

CacheRecord CachedLlm::query(const std::string& instruction) const {
  const std::string key = cache_key(config_.model_id, config_.sampling, instruction);
  if (auto hit = cache_.find(key)) return *hit;

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0 && config_.retry_backoff.count() > 0) {
      std::this_thread::sleep_for(config_.retry_backoff * (1 << std::min(attempt - 1, 6)));
    }
    try {
      CacheRecord record;
      record.key = key;
      record.model_id = config_.model_id;
      record.sampling = config_.sampling;
      record.instruction = instruction;
      record.response = backend_.complete(instruction, config_);
      record.created_at = utc_timestamp();
      cache_.store(record);
      return record;
    } catch (const TransientBackendError& e) {
      last_error = e.what();
      spdlog::debug("backend attempt {} failed: {}", attempt + 1, last_error);
    }
  }
  throw Error(ErrorCode::BackendUnavailable,
              "gave up after " + std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

PerspectiveSet elicit_perspectives(std::string_view target, int gamma, const CachedLlm& llm) {
  if (target.empty()) throw Error(ErrorCode::InvalidArgument, "empty target");
  if (gamma < kMinGamma || gamma > kMaxGamma) {
    throw Error(ErrorCode::InvalidArgument, "gamma must lie in [1, 16], got " + std::to_string(gamma));
  }
  PerspectiveSet set;
  set.target = std::string(target);
  set.gamma = gamma;

  const std::string instruction = build_s1(target, gamma);
  const CacheRecord first = llm.query(instruction);
  set.provenance.push_back(first.key);
  try {
    set.perspectives = parse_perspectives(first.response, gamma);
    return set;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::CountMismatch) throw;
    spdlog::warn("'{}': {}; re-prompting once", std::string(target), e.what());
  }
  const CacheRecord second = llm.query(instruction + recount_suffix(gamma));
  set.provenance.push_back(second.key);
  set.perspectives = parse_perspectives(second.response, gamma);
  return set;
}

PerspectiveIndex index_perspectives(std::span<const PerspectiveSet> sets) {
  PerspectiveIndex index;
  for (const auto& set : sets) index.emplace(text::fold_key(set.target), set);
  return index;
}

ExplanationRun generate_explanations(std::span<const corpus::Example> examples, const PerspectiveIndex& perspectives,
                                     const CachedLlm& llm, int parallelism) {
  if (parallelism < 1) throw Error(ErrorCode::InvalidArgument, "parallelism must be positive");

  struct Cell {
    std::size_t example;
    const PerspectiveSet* set;
    int index;
  };
  std::vector<Cell> cells;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    auto it = perspectives.find(text::fold_key(examples[e].target));
    if (it == perspectives.end()) {
      throw Error(ErrorCode::InvalidArgument, "no perspective set covers target '" + examples[e].target + "'");
    }
    for (int i = 0; i < it->second.gamma; ++i) cells.push_back({e, &it->second, i});
  }

  std::vector<std::optional<Explanation>> filled(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      const Cell& cell = cells[c];
      const auto& ex = examples[cell.example];
      const std::string& perspective = cell.set->perspectives[static_cast<std::size_t>(cell.index)];
      try {
        const CacheRecord record = llm.query(build_s2(ex.target, ex.text, perspective));
        auto parsed = parse_explanation(record.response);
        filled[c] = Explanation{ex.id, cell.index, perspective, std::move(parsed.text), parsed.judgment, record.key};
      } catch (const Error& e) {
        errors[c] = e.what();
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(parallelism), cells.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  ExplanationRun run;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (filled[c]) {
      run.explanations.push_back(std::move(*filled[c]));
    } else {
      run.failed.push_back({examples[cells[c].example].id, cells[c].index, errors[c]});
    }
  }
  if (!run.failed.empty()) {
    spdlog::warn("{} of {} explanation cells failed", run.failed.size(), cells.size());
  }
  return run;
}

void write_explanations(const std::filesystem::path& path, std::span<const Explanation> explanations) {
  std::string out = format_delimited_row({"example_id", "perspective_index", "perspective", "nle_text", "llm_judgment"}, '\t');
  for (const auto& e : explanations) {
    out += format_delimited_row({e.example_id, std::to_string(e.perspective_index), e.perspective, e.text,
                                 e.llm_judgment ? std::string(to_string(*e.llm_judgment)) : std::string()},
                                '\t');
  }
  write_file_atomic(path, out);
}

std::vector<Explanation> read_explanations(const std::filesystem::path& path) {
  const auto records = parse_delimited(read_file(path), '\t');
  if (records.empty() || records[0].fields.size() != 5 || records[0].fields[0] != "example_id") {
    throw Error(ErrorCode::MissingColumn, path.string() + " is not an explanation corpus");
  }
  std::vector<Explanation> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    if (f.size() != 5) throw Error(ErrorCode::Io, path.string() + ": malformed row at line " + std::to_string(records[r].line));
    Explanation e;
    e.example_id = f[0];
    e.perspective_index = std::stoi(f[1]);
    e.perspective = f[2];
    e.text = f[3];
    if (!f[4].empty()) e.llm_judgment = parse_canonical_label(f[4]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace mppt::tscot
