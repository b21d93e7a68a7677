#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/time.hpp"

namespace llmx {

/// Low closes when the round timeout (or the deadline) passes; Medium closes on
/// the first valid offer; High waits for every expected contractor or the
/// deadline.
enum class PolicyKind { low, medium, high };
enum class AwardMode { collect_only, award };
enum class TieBreak { earliest_arrival, lowest_agent_id };

constexpr std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::low: return "low";
    case PolicyKind::medium: return "medium";
    case PolicyKind::high: return "high";
  }
  return "";
}
constexpr std::string_view to_string(AwardMode m) { return m == AwardMode::award ? "award" : "collect-only"; }
constexpr std::string_view to_string(TieBreak t) {
  return t == TieBreak::lowest_agent_id ? "lowest-agent-id" : "earliest-arrival";
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::high;
  Duration round_timeout = 2s;
  AwardMode award_mode = AwardMode::collect_only;
  TieBreak tie_break = TieBreak::earliest_arrival;
};

struct ReceivedOffer {
  Offer offer;
  std::string msg_id;
  Timestamp received_at;
  std::string from;
};

struct Continue {
  bool operator==(const Continue&) const = default;
};
struct CloseNoAward {
  bool operator==(const CloseNoAward&) const = default;
};
/// Offer references are indices into RoundState::offers.
struct ConfirmFirst {
  std::size_t offer = 0;
  bool operator==(const ConfirmFirst&) const = default;
};
struct Award {
  std::size_t winner = 0;
  std::vector<std::size_t> losers;
  bool operator==(const Award&) const = default;
};

using Decision = std::variant<Continue, CloseNoAward, ConfirmFirst, Award>;

inline bool is_terminal(const Decision& d) { return !std::holds_alternative<Continue>(d); }

inline std::string_view decision_name(const Decision& d) {
  switch (d.index()) {
    case 0: return "continue";
    case 1: return "close-no-award";
    case 2: return "confirm-first";
    default: return "award";
  }
}

struct RoundState {
  std::string round_id;
  std::string cfp_msg_id;
  Timestamp cfp_sent_at;
  Timestamp deadline;
  std::size_t expected_contractors = 1;
  /// Offers scoring below this do not satisfy the CFP.
  std::optional<double> min_value;
  std::vector<ReceivedOffer> offers;
  std::optional<Decision> terminal;

  bool has_offer_from(std::string_view agent) const {
    return std::any_of(offers.begin(), offers.end(), [&](const auto& o) { return o.from == agent; });
  }
};

/// An offer is valid for its round when its value is finite and meets the
/// CFP's min_value constraint, if any.
inline bool offer_is_valid(const RoundState& state, const ReceivedOffer& o) {
  if (!std::isfinite(o.offer.value)) return false;
  return !state.min_value || o.offer.value >= *state.min_value;
}

/// Index of the highest-valued offer; ties resolved by `tie_break`, then by
/// position.
inline std::size_t select_winner(std::span<const ReceivedOffer> offers, TieBreak tie_break) {
  if (offers.empty()) throw Error(ErrorCode::empty_offers, "select_winner on empty offer list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < offers.size(); ++i) {
    const auto& a = offers[i];
    const auto& b = offers[best];
    if (a.offer.value > b.offer.value) {
      best = i;
    } else if (a.offer.value == b.offer.value) {
      const bool better = tie_break == TieBreak::earliest_arrival ? a.received_at < b.received_at : a.from < b.from;
      if (better) best = i;
    }
  }
  return best;
}

namespace detail {

inline Decision close_or_award(const PolicyConfig& cfg, const RoundState& state) {
  if (cfg.award_mode == AwardMode::collect_only) return CloseNoAward{};
  std::vector<ReceivedOffer> valid;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < state.offers.size(); ++i) {
    if (offer_is_valid(state, state.offers[i])) {
      valid.push_back(state.offers[i]);
      index.push_back(i);
    }
  }
  if (valid.empty()) return CloseNoAward{};
  Award award;
  award.winner = index[select_winner(valid, cfg.tie_break)];
  for (std::size_t i = 0; i < state.offers.size(); ++i) {
    if (i != award.winner) award.losers.push_back(i);
  }
  return award;
}

}  // namespace detail

/// Pure policy step: what the initiator should do with `state` at `now`.
inline Decision decide(const PolicyConfig& cfg, const RoundState& state, Timestamp now) {
  const Timestamp cutoff = std::min(state.deadline, state.cfp_sent_at + cfg.round_timeout);
  switch (cfg.kind) {
    case PolicyKind::low:
      if (now < cutoff) return Continue{};
      return detail::close_or_award(cfg, state);
    case PolicyKind::medium:
      for (std::size_t i = 0; i < state.offers.size(); ++i) {
        if (offer_is_valid(state, state.offers[i])) return ConfirmFirst{i};
      }
      if (now < cutoff) return Continue{};
      return CloseNoAward{};
    case PolicyKind::high:
      if (state.offers.size() < state.expected_contractors && now < state.deadline) return Continue{};
      if (state.offers.empty()) return CloseNoAward{};
      return detail::close_or_award(cfg, state);
  }
  return Continue{};
}

}  // namespace llmx
