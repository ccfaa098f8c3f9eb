#pragma once

namespace dpme {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dpme
