#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmx/error.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"

namespace llmx {

using Json = nlohmann::json;

/// Free-form key/value map carried inside payloads (always a JSON object).
using Attributes = Json;

enum class Consent { opt_in, opt_out };

constexpr std::string_view to_string(Consent c) { return c == Consent::opt_in ? "opt-in" : "opt-out"; }

struct ConsentScope {
  Consent consent = Consent::opt_in;
  std::int64_t ttl_s = 120;

  bool operator==(const ConsentScope&) const = default;
};

struct Cfp {
  std::string round_id;
  Timestamp deadline;
  Attributes constraints = Attributes::object();

  bool operator==(const Cfp&) const = default;
};

/// `value` is a dimensionless score; higher is better.
struct Offer {
  std::string round_id;
  double value = 0.0;
  Timestamp timestamp;
  Attributes conditions = Attributes::object();

  bool operator==(const Offer&) const = default;
};

struct Accept {
  std::string ref_msg_id;
  std::string round_id;
  bool operator==(const Accept&) const = default;
};

struct Reject {
  std::string ref_msg_id;
  std::string round_id;
  bool operator==(const Reject&) const = default;
};

struct Confirm {
  std::string ref_msg_id;
  std::string round_id;
  bool operator==(const Confirm&) const = default;
};

struct Ack {
  std::string ref_msg_id;
  bool operator==(const Ack&) const = default;
};

/// Terms must carry a numeric `price`.
struct AlternatingOffer {
  std::string session_id;
  std::uint64_t turn = 0;
  Attributes terms = Attributes::object();
  Timestamp valid_until;
  Attributes acceptance_conditions = Attributes::object();

  bool operator==(const AlternatingOffer&) const = default;
};

using Payload = std::variant<Cfp, Offer, Accept, Reject, Confirm, Ack, AlternatingOffer>;

enum class PayloadKind { cfp, offer, accept, reject, confirm, ack, alternating_offer };

inline PayloadKind kind_of(const Payload& p) { return static_cast<PayloadKind>(p.index()); }

constexpr std::string_view type_name(PayloadKind k) {
  switch (k) {
    case PayloadKind::cfp: return "CFP";
    case PayloadKind::offer: return "Offer";
    case PayloadKind::accept: return "Accept";
    case PayloadKind::reject: return "Reject";
    case PayloadKind::confirm: return "Confirm";
    case PayloadKind::ack: return "Ack";
    case PayloadKind::alternating_offer: return "AlternatingOffer";
  }
  return "";
}

constexpr std::string_view schema_id(PayloadKind k) {
  switch (k) {
    case PayloadKind::cfp: return "llmx/Negotiation.json#CFP";
    case PayloadKind::offer: return "llmx/Negotiation.json#Offer";
    case PayloadKind::accept: return "llmx/Negotiation.json#Accept";
    case PayloadKind::reject: return "llmx/Negotiation.json#Reject";
    case PayloadKind::confirm: return "llmx/Negotiation.json#Confirm";
    case PayloadKind::ack: return "llmx/Negotiation.json#Ack";
    case PayloadKind::alternating_offer: return "llmx/AlternatingOffer.json";
  }
  return "";
}

struct Envelope {
  std::string msg_id;
  Timestamp ts;
  std::string from;
  std::vector<std::string> to;
  std::vector<std::string> capabilities;
  ConsentScope scope;
  Payload payload;

  bool operator==(const Envelope&) const = default;

  template <typename T>
  const T* as() const {
    return std::get_if<T>(&payload);
  }
};

inline std::string agent_uri(std::string_view agent_id) { return "agent://" + std::string(agent_id); }

/// "agent://alice" -> "alice"; returns the input unchanged when it is not an agent URI.
inline std::string agent_name(std::string_view uri) {
  constexpr std::string_view prefix = "agent://";
  if (uri.starts_with(prefix)) return std::string(uri.substr(prefix.size()));
  return std::string(uri);
}

// ---------------------------------------------------------------------------
// Schema tables

enum class FieldType { string, number, count, timestamp, object, string_list, consent };

struct FieldSpec {
  std::string_view name;
  FieldType type;
  bool required = true;
};

struct Schema {
  PayloadKind kind;
  std::span<const FieldSpec> fields;
};

namespace schema {

inline constexpr FieldSpec kEnvelopeFields[] = {
    {"msg_id", FieldType::string},       {"ts", FieldType::timestamp},
    {"from", FieldType::string},         {"to", FieldType::string_list},
    {"capabilities", FieldType::string_list}, {"scope", FieldType::object},
};
inline constexpr FieldSpec kScopeFields[] = {
    {"consent", FieldType::consent},
    {"ttl", FieldType::count},
};
inline constexpr FieldSpec kCfpFields[] = {
    {"round_id", FieldType::string},
    {"deadline", FieldType::timestamp},
    {"constraints", FieldType::object, false},
};
inline constexpr FieldSpec kOfferFields[] = {
    {"round_id", FieldType::string},
    {"value", FieldType::number},
    {"timestamp", FieldType::timestamp},
    {"conditions", FieldType::object, false},
};
inline constexpr FieldSpec kDecisionFields[] = {
    {"ref_msg_id", FieldType::string},
    {"round_id", FieldType::string},
};
inline constexpr FieldSpec kAckFields[] = {
    {"ref_msg_id", FieldType::string},
};
inline constexpr FieldSpec kAlternatingOfferFields[] = {
    {"session_id", FieldType::string},       {"turn", FieldType::count},
    {"terms", FieldType::object},            {"valid_until", FieldType::timestamp},
    {"acceptance_conditions", FieldType::object},
};

inline constexpr Schema kPayloadSchemas[] = {
    {PayloadKind::cfp, kCfpFields},
    {PayloadKind::offer, kOfferFields},
    {PayloadKind::accept, kDecisionFields},
    {PayloadKind::reject, kDecisionFields},
    {PayloadKind::confirm, kDecisionFields},
    {PayloadKind::ack, kAckFields},
    {PayloadKind::alternating_offer, kAlternatingOfferFields},
};

inline const Schema* find(std::string_view type) {
  for (const auto& s : kPayloadSchemas) {
    if (type_name(s.kind) == type) return &s;
  }
  return nullptr;
}

inline const Schema& of(PayloadKind kind) { return kPayloadSchemas[static_cast<std::size_t>(kind)]; }

}  // namespace schema

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string path;
  std::string message;

  std::string str() const { return path.empty() ? message : path + ": " + message; }
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  explicit operator bool() const { return ok(); }

  bool mentions(std::string_view message) const {
    for (const auto& v : violations) {
      if (v.message.find(message) != std::string::npos) return true;
    }
    return false;
  }
};

namespace detail {

inline std::string_view type_label(FieldType t) {
  switch (t) {
    case FieldType::string: return "string";
    case FieldType::number: return "number";
    case FieldType::count: return "non-negative integer";
    case FieldType::timestamp: return "timestamp";
    case FieldType::object: return "object";
    case FieldType::string_list: return "list of strings";
    case FieldType::consent: return "consent enum";
  }
  return "";
}

inline void check_fields(const Json& obj, std::span<const FieldSpec> fields, const std::string& prefix,
                         std::vector<Violation>& out) {
  for (const auto& f : fields) {
    const std::string path = prefix + std::string(f.name);
    auto it = obj.find(f.name);
    if (it == obj.end() || it->is_null()) {
      if (f.required) out.push_back({path, "missing required field: " + std::string(f.name)});
      continue;
    }
    const Json& v = *it;
    bool ok = true;
    switch (f.type) {
      case FieldType::string: ok = v.is_string(); break;
      case FieldType::number:
        ok = v.is_number();
        if (ok && !std::isfinite(v.get<double>())) {
          out.push_back({path, "non-finite number"});
          continue;
        }
        break;
      case FieldType::count: ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); break;
      case FieldType::timestamp:
        ok = v.is_string();
        if (ok && !parse_iso8601(v.get_ref<const std::string&>())) {
          out.push_back({path, "invalid timestamp"});
          continue;
        }
        break;
      case FieldType::object: ok = v.is_object(); break;
      case FieldType::string_list:
        ok = v.is_array();
        if (ok) {
          for (const auto& e : v) ok = ok && e.is_string();
        }
        break;
      case FieldType::consent:
        ok = v.is_string();
        if (ok && v != "opt-in" && v != "opt-out") {
          out.push_back({path, "enum out of range"});
          continue;
        }
        break;
    }
    if (!ok) out.push_back({path, "wrong type: expected " + std::string(type_label(f.type))});
  }
}

inline bool has_scheme(std::string_view uri, std::string_view scheme) {
  return uri.starts_with(scheme) && uri.size() > scheme.size();
}

}  // namespace detail

/// Validates a wire-form envelope document against the embedded schemas.
/// Never throws; every problem found becomes a violation.
inline ValidationResult validate_document(const Json& doc) {
  ValidationResult r;
  auto& out = r.violations;
  if (!doc.is_object()) {
    out.push_back({"", "wrong type: expected object"});
    return r;
  }
  auto env = doc.find("envelope");
  if (env == doc.end() || !env->is_object()) {
    out.push_back({"envelope", "missing required field: envelope"});
  } else {
    detail::check_fields(*env, schema::kEnvelopeFields, "envelope.", out);
    if (auto from = env->find("from"); from != env->end() && from->is_string() &&
                                       !detail::has_scheme(from->get_ref<const std::string&>(), "agent://")) {
      out.push_back({"envelope.from", "invalid agent uri"});
    }
    if (auto to = env->find("to"); to != env->end() && to->is_array()) {
      if (to->empty()) out.push_back({"envelope.to", "empty recipient list"});
      for (const auto& t : *to) {
        if (!t.is_string()) continue;
        const auto& s = t.get_ref<const std::string&>();
        if (!detail::has_scheme(s, "agent://") && !detail::has_scheme(s, "topic://") &&
            !detail::has_scheme(s, "ack://")) {
          out.push_back({"envelope.to", "invalid recipient uri: " + s});
        }
      }
    }
    if (auto scope = env->find("scope"); scope != env->end() && scope->is_object()) {
      detail::check_fields(*scope, schema::kScopeFields, "envelope.scope.", out);
    }
  }

  auto payload = doc.find("payload");
  if (payload == doc.end() || !payload->is_object()) {
    out.push_back({"payload", "missing required field: payload"});
    return r;
  }
  auto type = payload->find("type");
  if (type == payload->end() || !type->is_string()) {
    out.push_back({"payload.type", "missing required field: type"});
    return r;
  }
  const Schema* s = schema::find(type->get_ref<const std::string&>());
  if (s == nullptr) {
    out.push_back({"payload.type", "enum out of range"});
    return r;
  }
  auto sid = payload->find("$schema");
  if (sid == payload->end() || !sid->is_string()) {
    out.push_back({"payload.$schema", "missing required field: $schema"});
  } else if (*sid != schema_id(s->kind)) {
    out.push_back({"payload.$schema", "schema mismatch"});
  }
  detail::check_fields(*payload, s->fields, "payload.", out);
  if (s->kind == PayloadKind::alternating_offer) {
    if (auto terms = payload->find("terms"); terms != payload->end() && terms->is_object()) {
      auto price = terms->find("price");
      if (price == terms->end()) {
        out.push_back({"payload.terms.price", "missing required field: price"});
      } else if (!price->is_number() || !std::isfinite(price->get<double>())) {
        out.push_back({"payload.terms.price", "wrong type: expected number"});
      }
    }
  }
  if (s->kind == PayloadKind::cfp) {
    if (auto c = payload->find("constraints"); c != payload->end() && c->is_object()) {
      if (auto mv = c->find("min_value"); mv != c->end() && !mv->is_number()) {
        out.push_back({"payload.constraints.min_value", "wrong type: expected number"});
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Canonical JSON encoding

inline Json payload_to_json(const Payload& payload) {
  Json j = Json::object();
  const PayloadKind kind = kind_of(payload);
  j["$schema"] = schema_id(kind);
  j["type"] = type_name(kind);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Cfp>) {
          j["round_id"] = p.round_id;
          j["deadline"] = format_iso8601(p.deadline);
          j["constraints"] = p.constraints;
        } else if constexpr (std::is_same_v<T, Offer>) {
          j["round_id"] = p.round_id;
          if (std::isfinite(p.value)) j["value"] = p.value;
          j["timestamp"] = format_iso8601(p.timestamp);
          j["conditions"] = p.conditions;
        } else if constexpr (std::is_same_v<T, Ack>) {
          j["ref_msg_id"] = p.ref_msg_id;
        } else if constexpr (std::is_same_v<T, AlternatingOffer>) {
          j["session_id"] = p.session_id;
          j["turn"] = p.turn;
          j["terms"] = p.terms;
          j["valid_until"] = format_iso8601(p.valid_until);
          j["acceptance_conditions"] = p.acceptance_conditions;
        } else {
          j["ref_msg_id"] = p.ref_msg_id;
          j["round_id"] = p.round_id;
        }
      },
      payload);
  return j;
}

inline Json to_json(const Envelope& env) {
  Json scope = {{"consent", to_string(env.scope.consent)}, {"ttl", env.scope.ttl_s}};
  Json meta = {{"msg_id", env.msg_id},
               {"ts", format_iso8601(env.ts)},
               {"from", env.from},
               {"to", env.to},
               {"capabilities", env.capabilities},
               {"scope", std::move(scope)}};
  return Json{{"envelope", std::move(meta)}, {"payload", payload_to_json(env.payload)}};
}

/// Canonical encoding: compact, UTF-8, keys sorted.
inline std::string serialize(const Envelope& env) { return to_json(env).dump(); }

namespace detail {

inline Timestamp ts_field(const Json& j, const char* key) {
  return *parse_iso8601(j.at(key).get_ref<const std::string&>());
}

inline Attributes object_field(const Json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? Attributes::object() : *it;
}

}  // namespace detail

/// Converts a validated document back to an Envelope; throws ParseError with
/// the violation list otherwise.
inline Envelope from_json(const Json& doc) {
  if (auto v = validate_document(doc); !v.ok()) {
    std::string msg;
    for (const auto& x : v.violations) msg += (msg.empty() ? "" : "; ") + x.str();
    throw Error(ErrorCode::parse_error, msg);
  }
  const Json& m = doc.at("envelope");
  const Json& p = doc.at("payload");
  Envelope env;
  env.msg_id = m.at("msg_id").get<std::string>();
  env.ts = detail::ts_field(m, "ts");
  env.from = m.at("from").get<std::string>();
  env.to = m.at("to").get<std::vector<std::string>>();
  env.capabilities = m.at("capabilities").get<std::vector<std::string>>();
  const Json& scope = m.at("scope");
  env.scope.consent = scope.at("consent") == "opt-in" ? Consent::opt_in : Consent::opt_out;
  env.scope.ttl_s = scope.at("ttl").get<std::int64_t>();

  switch (schema::find(p.at("type").get_ref<const std::string&>())->kind) {
    case PayloadKind::cfp:
      env.payload = Cfp{p.at("round_id").get<std::string>(), detail::ts_field(p, "deadline"),
                        detail::object_field(p, "constraints")};
      break;
    case PayloadKind::offer:
      env.payload = Offer{p.at("round_id").get<std::string>(), p.at("value").get<double>(),
                          detail::ts_field(p, "timestamp"), detail::object_field(p, "conditions")};
      break;
    case PayloadKind::accept:
      env.payload = Accept{p.at("ref_msg_id").get<std::string>(), p.at("round_id").get<std::string>()};
      break;
    case PayloadKind::reject:
      env.payload = Reject{p.at("ref_msg_id").get<std::string>(), p.at("round_id").get<std::string>()};
      break;
    case PayloadKind::confirm:
      env.payload = Confirm{p.at("ref_msg_id").get<std::string>(), p.at("round_id").get<std::string>()};
      break;
    case PayloadKind::ack:
      env.payload = Ack{p.at("ref_msg_id").get<std::string>()};
      break;
    case PayloadKind::alternating_offer:
      env.payload = AlternatingOffer{p.at("session_id").get<std::string>(), p.at("turn").get<std::uint64_t>(),
                                     p.at("terms"), detail::ts_field(p, "valid_until"),
                                     p.at("acceptance_conditions")};
      break;
  }
  return env;
}

inline Envelope parse_envelope(std::string_view text) {
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::parse_error, "malformed JSON");
  return from_json(doc);
}

/// Checks a typed envelope. Offer values are checked for finiteness before
/// encoding because JSON has no representation for NaN or infinity.
inline ValidationResult validate(const Envelope& env) {
  ValidationResult r;
  if (const auto* offer = env.as<Offer>(); offer != nullptr && !std::isfinite(offer->value)) {
    r.violations.push_back({"payload.value", "non-finite number"});
  }
  auto doc = validate_document(to_json(env));
  for (auto& v : doc.violations) {
    if (v.path == "payload.value" && !r.ok()) continue;
    r.violations.push_back(std::move(v));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Construction and sanitization

inline Envelope make_envelope(std::string from, std::vector<std::string> to, Payload payload, ConsentScope scope,
                              const Clock& clock, IdGenerator& ids, std::vector<std::string> capabilities = {}) {
  if (to.empty()) throw Error(ErrorCode::empty_recipients, "envelope from " + from + " has no recipients");
  Envelope env;
  env.msg_id = ids.next();
  env.ts = floor_ms(clock.now());
  env.from = std::move(from);
  env.to = std::move(to);
  env.capabilities = std::move(capabilities);
  env.scope = scope;
  env.payload = std::move(payload);
  return env;
}

inline constexpr std::string_view kRedacted = "[REDACTED]";

namespace detail {

inline void redact(Json& node, std::span<const std::string> keys) {
  if (node.is_object()) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      bool sensitive = false;
      for (const auto& k : keys) sensitive = sensitive || it.key() == k;
      if (sensitive) {
        it.value() = kRedacted;
      } else {
        redact(it.value(), keys);
      }
    }
  } else if (node.is_array()) {
    for (auto& e : node) redact(e, keys);
  }
}

}  // namespace detail

/// Returns a copy whose payload maps have every value under a sensitive key
/// replaced by "[REDACTED]", at any nesting depth.
inline Envelope sanitize(const Envelope& env, std::span<const std::string> sensitive_keys) {
  Envelope out = env;
  if (sensitive_keys.empty()) return out;
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Cfp>) {
          detail::redact(p.constraints, sensitive_keys);
        } else if constexpr (std::is_same_v<T, Offer>) {
          detail::redact(p.conditions, sensitive_keys);
        } else if constexpr (std::is_same_v<T, AlternatingOffer>) {
          detail::redact(p.terms, sensitive_keys);
          detail::redact(p.acceptance_conditions, sensitive_keys);
        }
      },
      out.payload);
  return out;
}

inline Envelope sanitize(const Envelope& env, std::initializer_list<std::string> keys) {
  std::vector<std::string> v(keys);
  return sanitize(env, std::span<const std::string>(v));
}

}  // namespace llmx
