#pragma once

#include <string>

#include "evoloss/program.hpp"

namespace evoloss {

// Human-readable expression for the output node; nodes that do not feed the
// output are omitted. Q-network applies print as Q(s,a)-style calls, squares
// via self-dot print as (expr)^2.
std::string pretty_print(const LossProgram& p);

}  // namespace evoloss
