#pragma once

namespace pdeseq {

inline constexpr const char* version_string = "0.1.0";

} // namespace pdeseq
