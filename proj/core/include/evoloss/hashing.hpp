#pragma once

#include <cstdint>

#include "evoloss/program.hpp"

namespace evoloss {

// Digest reserved for programs that cannot be evaluated (type-inconsistent).
inline constexpr std::uint64_t kInvalidDigest = 0;

// Behavior digest: evaluate the program on 10 fixed probe bindings with stub
// networks (state dim 6, 4 actions, hidden width 8, double precision), print
// each output component with %.6g and FNV-1a the concatenation. Programs that
// compute the same function collide on purpose; dead code never matters.
// Scalar output is not required; list/action outputs hash all components.
std::uint64_t functional_hash(const LossProgram& p);

}  // namespace evoloss
