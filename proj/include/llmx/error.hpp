#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace llmx {

enum class ErrorCode {
  empty_recipients,
  invalid_subject,
  expired,
  invalid_payload,
  parse_error,
  empty_offers,
  empty_samples,
  insufficient_data,
  invalid_distribution,
  invalid_rate,
  round_start_failed,
  wrong_turn,
  config_error,
  requires_multiple_seeds,
  io_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::empty_recipients: return "EmptyRecipients";
    case ErrorCode::invalid_subject: return "InvalidSubject";
    case ErrorCode::expired: return "Expired";
    case ErrorCode::invalid_payload: return "InvalidPayload";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::empty_offers: return "EmptyOffers";
    case ErrorCode::empty_samples: return "EmptySamples";
    case ErrorCode::insufficient_data: return "InsufficientData";
    case ErrorCode::invalid_distribution: return "InvalidDistribution";
    case ErrorCode::invalid_rate: return "InvalidRate";
    case ErrorCode::round_start_failed: return "RoundStartFailed";
    case ErrorCode::wrong_turn: return "WrongTurn";
    case ErrorCode::config_error: return "ConfigError";
    case ErrorCode::requires_multiple_seeds: return "RequiresMultipleSeeds";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

/// Every failure the library reports by exception carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Scenario configuration failure; `field()` is the dotted key that failed.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorCode::config_error, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace llmx
