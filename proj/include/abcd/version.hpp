#pragma once

namespace abcd {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace abcd
