#pragma once

#include "llmx/agents.hpp"
#include "llmx/altoffers.hpp"
#include "llmx/cnet.hpp"
#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/gateway.hpp"
#include "llmx/harness.hpp"
#include "llmx/metrics.hpp"
#include "llmx/policy.hpp"
#include "llmx/random.hpp"
#include "llmx/time.hpp"
#include "llmx/trace.hpp"
#include "llmx/traffic.hpp"
#include "llmx/transport.hpp"
#include "llmx/wire.hpp"
