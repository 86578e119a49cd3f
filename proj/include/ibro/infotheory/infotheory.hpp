#pragma once

#include "ibro/infotheory/enumerate.hpp"
#include "ibro/infotheory/env.hpp"
#include "ibro/infotheory/ibro.hpp"
#include "ibro/infotheory/measures.hpp"
