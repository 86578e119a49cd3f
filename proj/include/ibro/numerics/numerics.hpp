#pragma once

#include "ibro/numerics/grad_check.hpp"
#include "ibro/numerics/ops.hpp"
#include "ibro/numerics/tensor.hpp"
