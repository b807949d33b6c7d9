#pragma once

#include "sfusion/checkpoint.h"

namespace sfusion {

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace sfusion
