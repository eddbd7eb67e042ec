#pragma once

namespace modbeam {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace modbeam
