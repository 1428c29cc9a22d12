#pragma once

#include <string>

namespace softmcl {

// Shortest decimal form that parses back to the same double ('.' separator).
std::string format_number(double v);

}  // namespace softmcl
