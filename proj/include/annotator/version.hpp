#pragma once

namespace annotator {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace annotator
