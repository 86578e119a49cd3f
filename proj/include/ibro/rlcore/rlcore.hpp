#pragma once

#include "ibro/rlcore/adam.hpp"
#include "ibro/rlcore/advantages.hpp"
#include "ibro/rlcore/losses.hpp"
