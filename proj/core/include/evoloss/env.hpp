#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "evoloss/errors.hpp"

namespace evoloss {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int action_count = 0;
  int max_steps = 0;
  double r_min = 0.0;  // normalization range for training returns
  double r_max = 1.0;
  long eps_decay_steps = 1000;   // per-environment-class exploration schedule
  int default_episodes = 0;      // classic control budgets count episodes
  long default_step_budget = 0;  // gridworld budgets count env steps
};

struct StepResult {
  Eigen::VectorXd obs;
  double reward = 0.0;
  bool done = false;
};

// Episodic environment. reset(seed) reseeds the whole stream; the no-arg
// reset starts the next episode continuing the same stream, so a fixed seed
// fixes the entire training trajectory. step after done throws ContractError.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  virtual Eigen::VectorXd reset() = 0;
  virtual StepResult step(int action) = 0;
};

// Built-in names: cartpole, mountaincar, acrobot, and grid:<task>[:<n>[:<k>]]
// with tasks empty, emptyrandom, doorkey, dynobs, lavagap, simplecrossing,
// keycorridor, multiroom, fourrooms, unlock. Throws ConfigError for unknown
// names; lunarlander and atari are recognized as deliberately unsupported and
// rejected with a hint.
std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> builtin_env_names();

}  // namespace evoloss
