// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "caora/checkpoint.hpp"
#include "caora/config.hpp"
#include "caora/error.hpp"
#include "caora/mlp.hpp"
#include "caora/orchestrator.hpp"
#include "caora/replay_buffer.hpp"
#include "caora/resource_env.hpp"
#include "caora/sac_agent.hpp"
#include "caora/workload.hpp"
#include "caora/y1_telemetry.hpp"
#include "caora/commands.hpp"
