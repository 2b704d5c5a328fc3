#pragma once

#include "tta/tensor.hpp"

namespace tta {

// Fixed ids shared by every vocabulary.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kMaskId = 3;
inline constexpr TokenId kUnkId = 4;
inline constexpr int kNumSpecialTokens = 5;

}  // namespace tta
