#pragma once

namespace mtbp {

inline constexpr const char* kToolName = "mtbp";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace mtbp
