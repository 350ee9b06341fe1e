#include "mppt/synthetic.hpp"

#include "json.hpp"
#include "mppt/common.hpp"
#include "mppt/delimited.hpp"
#include "mppt/random.hpp"
#include "mppt/text.hpp"
#include "mppt/tscot.hpp"
#include "mppt/util.hpp"

namespace mppt::synthetic {

using nlohmann::json;

namespace {

struct Cues {
  std::vector<std::string> favor = {"love", "support", "welcome", "celebrate", "champion", "applaud"};
  std::vector<std::string> against = {"hate", "oppose", "reject", "resent", "condemn", "denounce"};
  std::vector<std::string> none = {"noticed", "overheard", "skimmed", "mentioned", "photographed", "scheduled"};
};

const Cues& cues() {
  static const Cues c;
  return c;
}

const std::vector<std::string> kStanceTemplates = {
    "i really {cue} {target} and i say it loudly",
    "honestly we {cue} {target} more every single day",
    "my neighbors {cue} {target} and so do i",
    "people like me {cue} {target} for good reasons",
    "today i {cue} {target} again",
};

const std::vector<std::string> kNeutralTemplates = {
    "someone {cue} a sign about {target} near the station",
    "the radio {cue} {target} between two songs",
    "i {cue} an article about {target} on the bus",
    "my cousin {cue} a meeting where {target} came up",
    "we {cue} {target} in passing at lunch",
};

const std::vector<std::string> kFillers = {"", " today", " honestly", " again", " #news", " lol"};

const std::vector<std::string> kTargets = {"Solar Energy",   "Wind Power",      "Nuclear Power",     "Public Transit",
                                           "Donald Trump",   "Hillary Clinton", "Feminist Movement", "Legalization of Abortion",
                                           "Climate Change", "Atheism"};

std::string replace(std::string s, std::string_view key, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = s.find(key, pos)) != std::string::npos) {
    s.replace(pos, key.size(), value);
    pos += value.size();
  }
  return s;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

std::string tweet(Rng& rng, StanceLabel label, const std::string& target) {
  const auto& c = cues();
  const auto& cue = label == StanceLabel::Favor ? pick(rng, c.favor) : label == StanceLabel::Against ? pick(rng, c.against) : pick(rng, c.none);
  const auto& tmpl = label == StanceLabel::None ? pick(rng, kNeutralTemplates) : pick(rng, kStanceTemplates);
  std::string t = replace(replace(tmpl, "{cue}", cue), "{target}", text::to_lower(target));
  return t + pick(rng, kFillers);
}

std::string nle_for(StanceLabel label, const std::string& perspective, const std::string& target) {
  switch (label) {
    case StanceLabel::Favor:
      return "Under the " + perspective + " angle the author clearly backs " + target + ". Judgment: favor";
    case StanceLabel::Against:
      return "Under the " + perspective + " angle the author pushes back on " + target + ". Judgment: against";
    case StanceLabel::None:
      break;
  }
  return "Under the " + perspective + " angle the text does not take a side on " + target + ". Judgment: none";
}

}  // namespace

const std::vector<std::string>& perspectives() {
  static const std::vector<std::string> p = {"economic cost",       "environmental impact", "public health",     "job creation",
                                             "energy security",     "personal experience",  "political ideology", "technological progress"};
  return p;
}

std::vector<corpus::Example> make_examples(const TaskOptions& options) {
  Rng rng = Rng::stream(options.seed, "synthetic-task");
  std::vector<corpus::Example> out;
  for (const auto& target : {options.source_target, options.dest_target}) {
    for (std::size_t i = 0; i < options.per_target; ++i) {
      const StanceLabel label = kAllLabels[i % kNumLabels];
      corpus::Example e;
      e.id = "syn-" + std::to_string(out.size());
      e.text = tweet(rng, label, target);
      e.target = target;
      e.label = label;
      e.split = corpus::Split::Train;
      out.push_back(std::move(e));
    }
  }
  return out;
}

TaskFiles write_task(const std::filesystem::path& dir, const TaskOptions& options) {
  const auto examples = make_examples(options);
  std::string csv = format_delimited_row({"id", "text", "target", "label"}, ',', '"');
  for (const auto& e : examples) {
    csv += format_delimited_row({e.id, e.text, e.target, std::string(to_string(*e.label))}, ',', '"');
  }
  write_file_atomic(dir / "data" / "synthetic.csv", csv);
  const json manifest = {{"name", "synthetic"},
                         {"path", "synthetic.csv"},
                         {"delimiter", ","},
                         {"has_header", true},
                         {"col", {{"id", "id"}, {"text", "text"}, {"target", "target"}, {"label", "label"}}},
                         {"label_map", {{"FAVOR", "FAVOR"}, {"AGAINST", "AGAINST"}, {"NONE", "NONE"}}},
                         {"split_rule", {{"kind", "fixed"}, {"split", "TRAIN"}}}};
  write_file_atomic(dir / "data" / "synthetic.json", manifest.dump(2) + "\n");

  // Stage one: the same eight angles for every target, as a numbered list.
  std::string list;
  for (std::size_t i = 0; i < perspectives().size(); ++i) list += std::to_string(i + 1) + ". " + perspectives()[i] + "\n";
  json rules = json::array();
  rules.push_back({{"contains", {"From what angles do you think people might state their stance"}}, {"responses", {list}}});
  // Stage two: the cue word in the embedded input decides the judgment.
  const std::string s2_marker = "give the stance analysis thinking or explanation";
  for (const auto& [words, label] : {std::pair{cues().favor, StanceLabel::Favor}, std::pair{cues().against, StanceLabel::Against}}) {
    for (const auto& w : words) {
      rules.push_back({{"contains", {s2_marker, " " + w + " "}}, {"responses", {nle_for(label, "{perspective}", "{target}")}}});
    }
  }
  rules.push_back({{"contains", {s2_marker}}, {"responses", {nle_for(StanceLabel::None, "{perspective}", "{target}")}}});
  write_file_atomic(dir / "mock_llm" / "rules.json", json{{"rules", rules}}.dump(2) + "\n");
  return {dir / "data" / "synthetic.json", dir / "mock_llm"};
}

std::vector<std::string> pretraining_corpus(std::size_t sentences, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "pretraining-corpus");
  const std::vector<std::pair<std::string, StanceLabel>> paraphrase = {
      {"people who {cue} it are in favor and happily pleased to agree", StanceLabel::Favor},
      {"an affirmative voice will {cue} it and agree with favor", StanceLabel::Favor},
      {"people who {cue} it are against it and oppose and disagree", StanceLabel::Against},
      {"a hostile voice will {cue} it and reject it as against", StanceLabel::Against},
      {"people who {cue} it show none and stay neutral or indifferent", StanceLabel::None},
      {"a neutral voice {cue} it with none of the feelings either way", StanceLabel::None},
  };
  std::vector<std::string> out;
  out.reserve(sentences);
  while (out.size() < sentences) {
    const auto& target = pick(rng, kTargets);
    const StanceLabel label = kAllLabels[rng.below(kNumLabels)];
    const auto& persp = pick(rng, perspectives());
    const std::string x = tweet(rng, label, target);
    switch (rng.below(4)) {
      case 0:
        out.push_back(x);
        break;
      case 1:
        out.push_back(nle_for(label, persp, target));
        break;
      case 2: {
        const auto& cue = label == StanceLabel::Favor ? pick(rng, cues().favor)
                          : label == StanceLabel::Against ? pick(rng, cues().against)
                                                          : pick(rng, cues().none);
        std::vector<std::string> options;
        for (const auto& [tmpl, l] : paraphrase) {
          if (l == label) options.push_back(tmpl);
        }
        out.push_back(replace(pick(rng, options), "{cue}", cue));
        break;
      }
      default:
        out.push_back(x + ". From the perspective of " + persp + " and " + nle_for(label, persp, target) + ". The attitude to " + target +
                      " is " + std::string(base_word(label)) + ".");
        break;
    }
  }
  return out;
}

}  // namespace mppt::synthetic
