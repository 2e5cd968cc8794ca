#pragma once

#include "omnet/bitvector.hpp"
#include "omnet/config.hpp"
#include "omnet/diagnostics.hpp"
#include "omnet/harness.hpp"
#include "omnet/mask.hpp"
#include "omnet/maze.hpp"
#include "omnet/nn.hpp"
#include "omnet/replay.hpp"
#include "omnet/rng.hpp"
#include "omnet/sac.hpp"
#include "omnet/serialize.hpp"
#include "omnet/trainer.hpp"
