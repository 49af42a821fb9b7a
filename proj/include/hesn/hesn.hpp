#pragma once

#include "hesn/error.hpp"
#include "hesn/harness.hpp"
#include "hesn/linearize.hpp"
#include "hesn/online.hpp"
#include "hesn/readout.hpp"
#include "hesn/reservoir.hpp"
#include "hesn/rng.hpp"
#include "hesn/tasks.hpp"
#include "hesn/timescales.hpp"
