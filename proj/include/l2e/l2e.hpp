#pragma once

// Umbrella header.

#include "l2e/baselines.hpp"
#include "l2e/bounds.hpp"
#include "l2e/commands.hpp"
#include "l2e/divergence.hpp"
#include "l2e/error.hpp"
#include "l2e/io.hpp"
#include "l2e/meta.hpp"
#include "l2e/numerics.hpp"
#include "l2e/random.hpp"
#include "l2e/taskstream.hpp"
#include "l2e/types.hpp"
