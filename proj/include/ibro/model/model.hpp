#pragma once

#include "ibro/model/checkpoint.hpp"
#include "ibro/model/decoder.hpp"
#include "ibro/model/sampling.hpp"
#include "ibro/model/transformer.hpp"
