#pragma once

// Diagnostics around the inner loop: exact ground-truth Q* on enumerable
// gridworlds, tabular probes of learned networks, and the four-way case
// decomposition of the DQNClipped loss.

#include <array>
#include <vector>

#include "evoloss/env_grid.hpp"
#include "evoloss/interp.hpp"
#include "evoloss/params.hpp"

namespace evoloss {

struct TabularTransition {
  int next = -1;  // -1 when the transition ends the episode
  double reward = 0.0;
  bool done = false;
};

// Deterministic finite MDP extracted from a gridworld: every reachable
// (pose, carried item, cell contents) configuration is a state.
struct TabularModel {
  GridTask task;
  double gamma = 0.99;
  int start = 0;
  std::vector<GridState> states;
  std::vector<std::array<TabularTransition, kGridActionCount>> trans;
  Eigen::MatrixXd obs;  // state encodings, one row per state
};

// Closure of grid_step from the task's (unique) layout. Requires
// grid_task_deterministic; throws ConfigError otherwise.
TabularModel enumerate_gridworld(const GridTask& task, double gamma);
TabularModel enumerate_gridworld(const std::string& env_name, double gamma);

// Exact value iteration to sup-norm residual < tol. Throws ConfigError when
// the iteration fails to contract (e.g. gamma >= 1 over a rewarding cycle).
Eigen::MatrixXd q_star(const TabularModel& model, double tol = 1e-10);

// Max Bellman optimality residual of an arbitrary Q-table under the model.
double bellman_residual(const TabularModel& model, const Eigen::MatrixXd& q);

// Network outputs on every enumerated state, aligned with q_star's rows.
Eigen::MatrixXd tabulate_q(const ParameterStore<float>& ps, const TabularModel& model);

// Branch activity of the DQNClipped loss, v1..v4 as in its constructor:
// v1 = Q(s,a), v2 = delta^2 + Y, v3 = Q(s,a) - Y, v4 = gamma*(max Q_targ)^2
// with Y the TD target. Cases: 1 = v1 active & v3 active, 2 = v1 & v4,
// 3 = v2 & v4 (the plain delta^2 regime), 4 = v2 & v3. Ties count for the
// first operand, matching Max's gradient rule.
struct CaseActivity {
  std::array<double, 4> frac{};
  double sum() const { return frac[0] + frac[1] + frac[2] + frac[3]; }
};

// The per-transition discount comes from batch.gamma (already zero on masked
// terminals), so the classification sees exactly what the loss saw.
CaseActivity case_activity(const Bindings<float>& batch, const ParameterStore<float>& ps);

// Classification from raw operand values; exposed for oracle tests.
int clipped_case_of(double v1, double v2, double v3, double v4);

}  // namespace evoloss
