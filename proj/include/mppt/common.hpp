#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mppt {

enum class StanceLabel : std::uint8_t { Favor = 0, Against = 1, None = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<StanceLabel, kNumLabels> kAllLabels = {
    StanceLabel::Favor, StanceLabel::Against, StanceLabel::None};

constexpr std::size_t index_of(StanceLabel label) {
  return static_cast<std::size_t>(label);
}

// "FAVOR" / "AGAINST" / "NONE"
std::string_view to_string(StanceLabel label);

// Lower-case verbalizer base word: "favor" / "against" / "none".
std::string_view base_word(StanceLabel label);

// Accepts the canonical names in any letter case.
std::optional<StanceLabel> parse_canonical_label(std::string_view name);

enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  Io,
  MissingColumn,
  UnknownLabel,
  EmptyField,
  DuplicateId,
  Unlabeled,
  EmptyPartition,
  TargetLeak,
  LengthMismatch,
  EmptyInput,
  CountMismatch,
  DuplicatePerspectives,
  EmptyExplanation,
  BackendUnavailable,
  PartialCompletion,
  LabelEmptied,
  BudgetTooSmall,
  SequenceOverflow,
  DivergenceDetected,
  MissingNLEs,
  StaleCorpus,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mppt
