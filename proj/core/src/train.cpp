#include "evoloss/train.hpp"

#include <algorithm>
#include <cmath>

namespace evoloss {

void ReplayBuffer::push(Transition t) {
  if (size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

Bindings<float> ReplayBuffer::sample(int batch, Rng& rng, float gamma,
                                     bool mask_terminal) const {
  if (size() < 1) throw ContractError("replay sample from empty buffer");
  const int dim = static_cast<int>(data_[0].s.size());
  Bindings<float> b;
  b.s_t.resize(batch, dim);
  b.s_tp1.resize(batch, dim);
  b.a_t.resize(batch);
  b.r_t.resize(batch);
  b.gamma.resize(batch);
  for (int i = 0; i < batch; ++i) {
    const Transition& t = data_[rng.index(data_.size())];
    b.s_t.row(i) = t.s.transpose();
    b.s_tp1.row(i) = t.s_next.transpose();
    b.a_t[i] = t.a;
    b.r_t(i) = t.r;
    b.gamma(i) = (mask_terminal && t.terminal) ? 0.0f : gamma;
  }
  return b;
}

int epsilon_greedy(const std::vector<float>& q, double eps, Rng& rng) {
  const int n = static_cast<int>(q.size());
  if (n < 1) throw ContractError("epsilon_greedy: empty action values");
  if (eps > 0.0 && rng.uniform() < eps) return static_cast<int>(rng.index(n));
  int best = 0;
  bool have = std::isfinite(q[0]);
  for (int i = 1; i < n; ++i) {
    if (!std::isfinite(q[i])) continue;
    if (!have || q[i] > q[best]) {
      best = i;
      have = true;
    }
  }
  return best;
}

std::vector<float> q_values(const ParameterStore<float>& ps, const Eigen::VectorXd& obs) {
  const int qi = ps.index_of("q");
  if (qi < 0) throw ContractError("q_values: store has no q net");
  const Mlp<float>& net = ps.entry(qi).mlp;
  Mlp<float>::Mat x(1, obs.size());
  x.row(0) = obs.cast<float>().transpose();
  const Mlp<float>::Mat y = mlp_forward(net, x);
  return std::vector<float>(y.data(), y.data() + y.cols());
}

double normalized_return(double avg_return, const EnvSpec& spec) {
  const double span = spec.r_max - spec.r_min;
  if (span <= 0.0) throw ContractError("normalized_return: bad range for " + spec.name);
  return std::clamp((avg_return - spec.r_min) / span, 0.0, 1.0);
}

EvalResult eval_algorithm(const LossProgram& prog, const std::string& env_name,
                          const TrainConfig& cfg) {
  const ValidationReport report = validate_program(prog);
  if (!report.is_valid) {
    throw ConfigError("eval_algorithm: invalid program: " + report.describe());
  }

  auto env = make_env(env_name);
  const EnvSpec& spec = env->spec();

  int episode_budget = cfg.episodes;
  long step_budget = cfg.step_budget;
  if (episode_budget == 0 && step_budget == 0) {
    episode_budget = spec.default_episodes;
    step_budget = spec.default_step_budget;
  }
  const bool by_episodes = episode_budget > 0;
  if (!by_episodes && step_budget <= 0) {
    throw ConfigError("eval_algorithm: no training budget for " + env_name);
  }
  const long eps_decay =
      cfg.eps_decay_steps > 0 ? cfg.eps_decay_steps : spec.eps_decay_steps;

  const std::uint64_t run_seed = mix_seed(cfg.seed, fnv1a64(env_name));
  auto store = ParameterStore<float>::init_for(prog, spec.obs_dim, spec.action_count,
                                               cfg.hidden, run_seed);
  Rng explore = fork_stream(run_seed, "explore");
  Rng replay_rng = fork_stream(run_seed, "replay");
  const std::uint64_t noise_root = mix_seed(run_seed, fnv1a64("noise"));

  ReplayBuffer buffer(cfg.buffer_capacity);
  EvalOptions opts;
  opts.per_element_noise = cfg.per_element_noise;

  EvalResult res;
  res.env = env_name;

  Eigen::VectorXd obs = env->reset(mix_seed(run_seed, fnv1a64("episodes")));
  const Eigen::VectorXd probe_obs = obs;
  double ep_return = 0.0;
  int ep_len = 0;
  int bad_losses = 0;

  // Probes land at steps k*interval, so the series length is exactly
  // total steps / interval when the budget divides evenly.
  const auto record_probe = [&] {
    const std::vector<float> q = q_values(store, probe_obs);
    res.probe_steps.push_back(res.env_steps);
    res.q_probe.emplace_back(q.begin(), q.end());
  };

  bool stop = false;
  while (!stop) {
    const double frac =
        eps_decay > 0 ? std::min(1.0, static_cast<double>(res.env_steps) / eps_decay)
                      : 1.0;
    const double eps = cfg.eps_start + frac * (cfg.eps_final - cfg.eps_start);
    const int action = epsilon_greedy(q_values(store, obs), eps, explore);

    const StepResult sr = env->step(action);
    Transition t;
    t.s = obs.cast<float>();
    t.s_next = sr.obs.cast<float>();
    t.a = action;
    t.r = static_cast<float>(sr.reward);
    t.terminal = sr.done;
    buffer.push(std::move(t));
    obs = sr.obs;
    ep_return += sr.reward;
    ep_len += 1;
    res.env_steps += 1;

    if (buffer.size() >= cfg.batch_size) {
      const Bindings<float> batch = buffer.sample(
          cfg.batch_size, replay_rng, static_cast<float>(cfg.gamma),
          cfg.mask_terminal_bootstrap);
      Tape<float> tape = eval_forward(
          prog, batch, store, mix_seed(noise_root, static_cast<std::uint64_t>(res.grad_steps)),
          opts);
      const float loss = tape.mean_loss();
      if (!std::isfinite(loss)) {
        bad_losses += 1;
        if (bad_losses >= cfg.divergence_patience) {
          res.diverged = true;
          break;
        }
      } else {
        bad_losses = 0;
        const GradMap<float> grads = eval_backward(tape, store);
        apply_grads(store, grads, cfg.adam);
      }
      res.grad_steps += 1;
      if (res.grad_steps % cfg.target_sync == 0) store.sync_target();
      if (cfg.on_update) cfg.on_update(batch, store, res.grad_steps);
    }

    if (cfg.probe_interval > 0 && res.env_steps % cfg.probe_interval == 0) {
      record_probe();
    }

    if (sr.done) {
      res.episode_returns.push_back(ep_return);
      res.episode_lengths.push_back(ep_len);
      ep_return = 0.0;
      ep_len = 0;
      if (by_episodes) {
        stop = static_cast<int>(res.episode_returns.size()) >= episode_budget;
      } else {
        stop = res.env_steps >= step_budget;
      }
      if (!stop) obs = env->reset();
    }
  }

  // Score is the mean of per-episode clipped normalized returns, not the
  // normalization of the mean: episodes outside [r_min, r_max] clip first.
  double avg = spec.r_min;
  double norm_sum = 0.0;
  if (!res.episode_returns.empty()) {
    double sum = 0.0;
    for (double r : res.episode_returns) {
      sum += r;
      norm_sum += normalized_return(r, spec);
    }
    avg = sum / static_cast<double>(res.episode_returns.size());
    norm_sum /= static_cast<double>(res.episode_returns.size());
  }
  res.average_return = avg;
  res.normalized_score = res.diverged ? 0.0 : norm_sum;
  res.params = std::move(store);
  return res;
}

SuiteScore score_on_suite(const LossProgram& prog, const std::vector<std::string>& envs,
                          int seeds_per_env, const TrainConfig& cfg) {
  if (seeds_per_env < 1) throw ConfigError("score_on_suite: seeds_per_env < 1");
  SuiteScore suite;
  double total = 0.0;
  for (const std::string& env : envs) {
    EnvScore es;
    es.env = env;
    double env_sum = 0.0;
    for (int i = 0; i < seeds_per_env; ++i) {
      TrainConfig run = cfg;
      run.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
      run.on_update = nullptr;
      const EvalResult r = eval_algorithm(prog, env, run);
      es.seed_scores.push_back(r.normalized_score);
      env_sum += r.normalized_score;
      suite.any_diverged = suite.any_diverged || r.diverged;
    }
    es.mean = env_sum / seeds_per_env;
    total += es.mean;
    suite.envs.push_back(std::move(es));
  }
  suite.total = total;
  return suite;
}

}  // namespace evoloss
