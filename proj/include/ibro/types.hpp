#pragma once

#include <cstdint>
#include <vector>

namespace ibro {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

}  // namespace ibro
