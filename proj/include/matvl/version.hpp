#pragma once

namespace matvl {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace matvl
