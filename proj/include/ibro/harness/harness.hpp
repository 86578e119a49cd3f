#pragma once

#include "ibro/harness/batch.hpp"
#include "ibro/harness/compare.hpp"
#include "ibro/harness/config.hpp"
#include "ibro/harness/gradcheck.hpp"
#include "ibro/harness/metrics.hpp"
#include "ibro/harness/trainer.hpp"
