#pragma once

#include <string_view>

namespace dcmrta {

inline constexpr std::string_view kCodeVersion = DCMRTA_VERSION;

}  // namespace dcmrta
