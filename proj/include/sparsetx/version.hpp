#pragma once

namespace sparsetx {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sparsetx
