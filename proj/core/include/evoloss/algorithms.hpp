#pragma once

#include <string>
#include <vector>

#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"

namespace evoloss {

// Hand-written graphs of the reference algorithms, built on the canonical
// preamble with the output as the last node.
LossProgram make_dqn();
LossProgram make_ddqn();
LossProgram make_dqn_clipped();
LossProgram make_dqn_reg(double k = 0.1);

// Bootstrapped search seed: (op_budget - 8) random op nodes as a dead head,
// then the 8 DQN nodes with the output last. Behaves exactly like DQN until
// mutation rewires something.
LossProgram make_bootstrap_program(int op_budget, Rng& rng);

// Registry for CLI names: dqn, ddqn, dqnclipped, dqnreg, dqnreg:k=<value>
// (dqn_clipped is accepted as an alias). Throws ConfigError for unknown names.
LossProgram algorithm_by_name(const std::string& name);
std::vector<std::string> algorithm_names();

}  // namespace evoloss
