#include "evoloss/analysis.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace evoloss {

TabularModel enumerate_gridworld(const GridTask& task, double gamma) {
  if (!grid_task_deterministic(task)) {
    throw ConfigError("enumerate_gridworld: " + task.name +
                      " has randomized layouts or dynamics");
  }
  TabularModel model;
  model.task = task;
  model.gamma = gamma;

  Rng unused(0);  // deterministic tasks never draw
  GridState start = generate_layout(task, unused);

  std::map<std::vector<std::uint8_t>, int> index;
  const auto intern = [&](const GridState& s) {
    const auto key = canonical_grid_key(s);
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(model.states.size());
    index.emplace(key, id);
    model.states.push_back(s);
    return id;
  };

  model.start = intern(start);
  for (int i = 0; i < static_cast<int>(model.states.size()); ++i) {
    model.trans.emplace_back();
    for (int a = 0; a < kGridActionCount; ++a) {
      GridState next = model.states[i];  // copy; grid_step mutates
      const GridOutcome out = grid_step(next, task, a, nullptr);
      TabularTransition& t = model.trans.back()[a];
      t.reward = out.reward;
      t.done = out.done;
      t.next = out.done ? -1 : intern(next);
    }
  }

  const int dim = task.n * task.n * 3;
  model.obs.resize(static_cast<int>(model.states.size()), dim);
  for (int i = 0; i < static_cast<int>(model.states.size()); ++i) {
    model.obs.row(i) = encode_grid_obs(model.states[i]).transpose();
  }
  return model;
}

TabularModel enumerate_gridworld(const std::string& env_name, double gamma) {
  return enumerate_gridworld(parse_grid_task(env_name), gamma);
}

Eigen::MatrixXd q_star(const TabularModel& model, double tol) {
  const int n = static_cast<int>(model.states.size());
  const int na = kGridActionCount;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, na);

  // Values are built purely from sums and products of gamma and rewards, so
  // acyclic optimal paths come out exact (e.g. gamma^(k) for k steps). With
  // gamma < 1 allow enough sweeps for geometric contraction down to tol;
  // gamma >= 1 gets only the exact-fixpoint budget and may legitimately fail.
  long max_iters = 16L * n + 64;
  if (model.gamma > 0.0 && model.gamma < 1.0) {
    max_iters += static_cast<long>(
        std::ceil(std::log(std::max(tol, 1e-300)) / std::log(model.gamma)));
  }
  for (long it = 0; it < max_iters; ++it) {
    double residual = 0.0;
    Eigen::VectorXd v_next(n);
    for (int s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < na; ++a) {
        const TabularTransition& t = model.trans[s][a];
        const double target = t.reward + (t.done ? 0.0 : model.gamma * v(t.next));
        q(s, a) = target;
        best = std::max(best, target);
      }
      v_next(s) = best;
      residual = std::max(residual, std::abs(best - v(s)));
    }
    v = std::move(v_next);
    if (residual < tol) {
      // One final sweep so q is consistent with the converged v.
      for (int s = 0; s < n; ++s) {
        for (int a = 0; a < na; ++a) {
          const TabularTransition& t = model.trans[s][a];
          q(s, a) = t.reward + (t.done ? 0.0 : model.gamma * v(t.next));
        }
      }
      return q;
    }
  }
  throw ConfigError("q_star: value iteration did not contract (gamma >= 1?)");
}

double bellman_residual(const TabularModel& model, const Eigen::MatrixXd& q) {
  double residual = 0.0;
  for (int s = 0; s < static_cast<int>(model.states.size()); ++s) {
    for (int a = 0; a < kGridActionCount; ++a) {
      const TabularTransition& t = model.trans[s][a];
      const double target =
          t.reward + (t.done ? 0.0 : model.gamma * q.row(t.next).maxCoeff());
      residual = std::max(residual, std::abs(q(s, a) - target));
    }
  }
  return residual;
}

Eigen::MatrixXd tabulate_q(const ParameterStore<float>& ps, const TabularModel& model) {
  const int qi = ps.index_of("q");
  if (qi < 0) throw ContractError("tabulate_q: store has no q net");
  const Mlp<float>::Mat x = model.obs.cast<float>();
  return mlp_forward(ps.entry(qi).mlp, x).cast<double>();
}

int clipped_case_of(double v1, double v2, double v3, double v4) {
  const bool first = v1 >= v2;   // Q(s,a) carries the first max
  const bool second = v3 >= v4;  // Q(s,a) - Y carries the second max
  if (first && second) return 1;
  if (first && !second) return 2;
  if (!first && !second) return 3;
  return 4;
}

CaseActivity case_activity(const Bindings<float>& batch, const ParameterStore<float>& ps) {
  const int qi = ps.index_of("q");
  const int ti = ps.index_of("q_target");
  if (qi < 0 || ti < 0) throw ContractError("case_activity: store lacks q/q_target");

  const Mlp<float>::Mat qs = mlp_forward(ps.entry(qi).mlp, batch.s_t);
  const Mlp<float>::Mat qt = mlp_forward(ps.entry(ti).mlp, batch.s_tp1);

  CaseActivity act;
  const int n = batch.batch();
  for (int i = 0; i < n; ++i) {
    const double qsa = qs(i, detail::wrap_index(batch.a_t[i], static_cast<int>(qs.cols())));
    const double maxqt = qt.row(i).maxCoeff();
    const double g = batch.gamma(i);
    const double y = batch.r_t(i) + g * maxqt;
    const double delta = qsa - y;
    const int c = clipped_case_of(qsa, delta * delta + y, delta, g * maxqt * maxqt);
    act.frac[c - 1] += 1.0;
  }
  for (double& f : act.frac) f /= n;
  return act;
}

}  // namespace evoloss
