#pragma once

namespace mcf {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mcf
