#pragma once

#include "ibro/error.hpp"
#include "ibro/harness/harness.hpp"
#include "ibro/infotheory/infotheory.hpp"
#include "ibro/kvconfig.hpp"
#include "ibro/model/model.hpp"
#include "ibro/numerics/numerics.hpp"
#include "ibro/random.hpp"
#include "ibro/rlcore/rlcore.hpp"
#include "ibro/rollout/rollout.hpp"
#include "ibro/tasks/tasks.hpp"
#include "ibro/types.hpp"
