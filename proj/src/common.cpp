#include "mppt/common.hpp"

#include <algorithm>
#include <cctype>

namespace mppt {

std::string_view to_string(StanceLabel label) {
  switch (label) {
    case StanceLabel::Favor: return "FAVOR";
    case StanceLabel::Against: return "AGAINST";
    case StanceLabel::None: return "NONE";
  }
  return "NONE";
}

std::string_view base_word(StanceLabel label) {
  switch (label) {
    case StanceLabel::Favor: return "favor";
    case StanceLabel::Against: return "against";
    case StanceLabel::None: return "none";
  }
  return "none";
}

std::optional<StanceLabel> parse_canonical_label(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto label : kAllLabels) {
    if (upper == to_string(label)) return label;
  }
  return std::nullopt;
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyField: return "EmptyField";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::Unlabeled: return "Unlabeled";
    case ErrorCode::EmptyPartition: return "EmptyPartition";
    case ErrorCode::TargetLeak: return "TargetLeak";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DuplicatePerspectives: return "DuplicatePerspectives";
    case ErrorCode::EmptyExplanation: return "EmptyExplanation";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::PartialCompletion: return "PartialCompletion";
    case ErrorCode::LabelEmptied: return "LabelEmptied";
    case ErrorCode::BudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::SequenceOverflow: return "SequenceOverflow";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::MissingNLEs: return "MissingNLEs";
    case ErrorCode::StaleCorpus: return "StaleCorpus";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace mppt
