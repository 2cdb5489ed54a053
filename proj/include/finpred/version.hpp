#pragma once

#include <string_view>

namespace finpred {

inline constexpr std::string_view kToolVersion = "finpred 0.1.0";

}  // namespace finpred
