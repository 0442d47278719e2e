#pragma once

// Inner-loop evaluation: trains a Q-learning agent whose update rule is the
// candidate loss program, then scores it by normalized average training
// return. Acting is always epsilon-greedy on the q net; the program only
// shapes the gradient.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evoloss/env.hpp"
#include "evoloss/interp.hpp"
#include "evoloss/params.hpp"
#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"

namespace evoloss {

struct Transition {
  Eigen::VectorXf s, s_next;
  std::int32_t a = 0;
  float r = 0.0f;
  bool terminal = false;
};

// Fixed-capacity ring with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

  void push(Transition t);
  int size() const { return static_cast<int>(data_.size()); }
  int capacity() const { return capacity_; }
  const Transition& at(int i) const { return data_[i]; }

  // Uniform with replacement. gamma lands per-transition; masked terminals
  // get gamma 0 so the graph's bootstrap term drops out.
  Bindings<float> sample(int batch, Rng& rng, float gamma, bool mask_terminal) const;

 private:
  int capacity_;
  int next_ = 0;
  std::vector<Transition> data_;
};

struct TrainConfig {
  // 0 means take the environment default (episodes for classic control,
  // step budget for gridworlds; the nonzero one wins).
  int episodes = 0;
  long step_budget = 0;

  int batch_size = 32;
  int buffer_capacity = 10000;
  int target_sync = 100;  // gradient steps between q -> q_target copies
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_final = 0.05;
  long eps_decay_steps = 0;  // 0: environment default
  int hidden = 256;
  AdamHyper adam;
  std::uint64_t seed = 0;
  bool mask_terminal_bootstrap = true;
  bool per_element_noise = true;
  int divergence_patience = 100;  // consecutive non-finite losses before abort
  long probe_interval = 0;        // env steps between Q(s0, .) probes; 0 off

  // Called after each gradient step with the sampled minibatch and current
  // weights; lets callers track update statistics without touching the loop.
  std::function<void(const Bindings<float>&, const ParameterStore<float>&, long)>
      on_update;
};

struct EvalResult {
  std::string env;
  double normalized_score = 0.0;
  double average_return = 0.0;
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;
  long env_steps = 0;
  long grad_steps = 0;
  bool diverged = false;
  bool fault = false;  // set by the evolution driver on worker crashes
  std::vector<long> probe_steps;
  std::vector<std::vector<double>> q_probe;  // Q(s0, .) at each probe

  ParameterStore<float> params;  // final weights
};

// Greedy argmax with ties going to the lowest index; explores with
// probability eps. Non-finite values never win the argmax.
int epsilon_greedy(const std::vector<float>& q, double eps, Rng& rng);

// Q(s, .) for acting/probing: one forward pass of the q net.
std::vector<float> q_values(const ParameterStore<float>& ps, const Eigen::VectorXd& obs);

// Maps one return onto [0, 1] via the env's return range, clipping at both
// ends. Scores average this over episodes.
double normalized_return(double return_value, const EnvSpec& spec);

// Trains on one environment with one seed. The program must pass
// validate_program; throws ConfigError otherwise.
EvalResult eval_algorithm(const LossProgram& prog, const std::string& env_name,
                          const TrainConfig& cfg);

struct EnvScore {
  std::string env;
  std::vector<double> seed_scores;
  double mean = 0.0;
};

struct SuiteScore {
  std::vector<EnvScore> envs;
  double total = 0.0;  // sum over envs of the per-env mean across seeds
  bool any_diverged = false;
};

// The meta-objective: sum of normalized scores across the suite, each env
// averaged over seeds_per_env runs. Run i of an env uses seed mix(cfg.seed, i);
// per-env training budgets come from the env defaults unless cfg pins them.
SuiteScore score_on_suite(const LossProgram& prog, const std::vector<std::string>& envs,
                          int seeds_per_env, const TrainConfig& cfg);

}  // namespace evoloss
