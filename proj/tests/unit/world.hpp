#pragma once

#include "llmx/llmx.hpp"

namespace llmx::test {

inline Timestamp t0() { return *parse_iso8601("2025-01-01T00:00:00.000Z"); }

/// One in-process exchange on a virtual clock.
struct World {
  explicit World(GatewayConfig gw = {}, BusOptions bus_options = {})
      : bus(loop, ids, &trace, bus_options), gateway(std::move(gw), &trace), registry(gateway, 24h) {}

  VirtualClock loop{t0()};
  IdGenerator ids{7};
  TraceSink trace;
  Bus bus;
  Gateway gateway;
  Registry registry;
  Exchange x{loop, bus, gateway, registry, trace, ids};

  std::vector<TraceEvent> of_kind(TraceKind k) const {
    std::vector<TraceEvent> out;
    for (auto& e : trace.events()) {
      if (e.kind == k) out.push_back(e);
    }
    return out;
  }
};

}  // namespace llmx::test
