#pragma once

#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"

namespace evoloss {

// Fresh random program: the canonical preamble plus op_budget op nodes, each
// op drawn uniformly among ops that admit at least one type-valid parent
// assignment from earlier nodes, then a uniform assignment for that op. The
// last node is the output; it is redrawn (at most 50 tries, then restricted
// to Float-producing ops) until its type is Float. Throws
// std::invalid_argument when op_budget < 1.
LossProgram sample_program(int op_budget, Rng& rng);

// Uniformly pick one op node and replace it in place with a freshly sampled
// op + assignment valid at that position. Inputs and parameter nodes are
// never touched; node count and output index are preserved. Downstream nodes
// may become ill-typed; the evolution-side program checks catch that.
LossProgram mutate_program(const LossProgram& parent, Rng& rng);

// Append `count` random op nodes (same distribution as sample_program uses,
// without the Float constraint). Used for fresh samples and for the random
// head of bootstrapped programs.
void append_random_nodes(LossProgram& p, int count, Rng& rng);

}  // namespace evoloss
