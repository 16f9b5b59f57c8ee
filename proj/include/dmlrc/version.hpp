#pragma once

namespace dmlrc {
inline constexpr const char* kVersion = "0.1.0";
}
