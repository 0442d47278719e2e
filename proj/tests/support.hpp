#pragma once

// Shared helpers for the unit and acceptance tests: deterministic bindings,
// stub parameter stores with hand-readable outputs, and a finite-difference
// gradient checker that first audits the evaluation point for smoothness.

#include <cmath>
#include <cstdint>
#include <vector>

#include "evoloss/interp.hpp"
#include "evoloss/params.hpp"
#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"

namespace testsup {

using namespace evoloss;

inline Bindings<double> random_bindings(int batch, int state_dim, int action_count,
                                        Rng& rng, bool mask_last_terminal = true) {
  Bindings<double> b;
  b.s_t.resize(batch, state_dim);
  b.s_tp1.resize(batch, state_dim);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < state_dim; ++j) {
      b.s_t(i, j) = rng.uniform(-1.0, 1.0);
      b.s_tp1(i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  b.a_t.resize(batch);
  for (int i = 0; i < batch; ++i) b.a_t[i] = rng.index(action_count);
  b.r_t.resize(batch);
  b.gamma.resize(batch);
  for (int i = 0; i < batch; ++i) {
    b.r_t(i) = rng.uniform(-1.0, 1.0);
    b.gamma(i) = 0.99;
  }
  if (mask_last_terminal && batch > 1) b.gamma(batch - 1) = 0.0;
  return b;
}

// Zeroes every weight so each network's output is exactly its output bias.
template <class S>
void zero_store(ParameterStore<S>& ps) {
  for (int i = 0; i < ps.size(); ++i) {
    auto& m = ps.entry(i).mlp;
    m.w1.setZero();
    m.b1.setZero();
    m.w2.setZero();
    m.b2.setZero();
    m.w3.setZero();
    m.b3.setZero();
  }
}

// Flattened coordinate views over a network and its gradient, in matching
// order, so finite differences can walk any weight.
inline std::vector<double*> net_coords(Mlp<double>& m) {
  std::vector<double*> v;
  const auto add = [&v](auto& arr) {
    for (long i = 0; i < arr.size(); ++i) v.push_back(arr.data() + i);
  };
  add(m.w1);
  add(m.b1);
  add(m.w2);
  add(m.b2);
  add(m.w3);
  add(m.b3);
  return v;
}

inline std::vector<double> grad_coords(const MlpGrads<double>& g, const Mlp<double>& shape) {
  std::vector<double> v;
  if (!g.allocated) {
    long total = shape.w1.size() + shape.b1.size() + shape.w2.size() + shape.b2.size() +
                 shape.w3.size() + shape.b3.size();
    return std::vector<double>(static_cast<std::size_t>(total), 0.0);
  }
  const auto add = [&v](const auto& arr) {
    for (long i = 0; i < arr.size(); ++i) v.push_back(arr.data()[i]);
  };
  add(g.w1);
  add(g.b1);
  add(g.w2);
  add(g.b2);
  add(g.w3);
  add(g.b3);
  return v;
}

// True when every kink the graph can express sits far enough from the
// evaluation point that a central difference of step h stays on one side.
// Finite differences are meaningless across a max/relu/guard crossing, so
// callers resample the weight seed instead of checking such points.
inline bool smooth_at(const LossProgram& p, const Tape<double>& tape,
                      const ParameterStore<double>& ps) {
  constexpr double kGeneralMargin = 3e-3;  // pairwise max/min, list gaps, abs
  constexpr double kReluMargin = 1e-3;     // preactivation distance to zero
  constexpr double kDivMargin = 1e-2;      // denominator distance to the guard
  constexpr double kValueBound = 1e6;

  const auto vals_of = [](const Batch<double>& b) {
    std::vector<double> out;
    if (b.type == DType::Float) {
      for (long i = 0; i < b.vec.size(); ++i) out.push_back(b.vec(i));
    } else if (b.type != DType::Action) {
      for (long i = 0; i < b.mat.size(); ++i) out.push_back(b.mat.data()[i]);
    }
    return out;
  };

  const int n = static_cast<int>(p.nodes.size());
  for (int i = 0; i < n; ++i) {
    if (!tape.reachable[i]) continue;
    const Node& node = p.nodes[i];
    if (node.kind == NodeKind::Param) continue;
    for (double v : vals_of(tape.values[i])) {
      if (!std::isfinite(v) || std::abs(v) > kValueBound) return false;
    }
    if (node.kind != NodeKind::OpNode) continue;

    const auto pairwise_margin = [&](int pa, int pb) {
      const auto& a = tape.values[node.parents[static_cast<std::size_t>(pa)]];
      const auto& b = tape.values[node.parents[static_cast<std::size_t>(pb)]];
      double m = 1e30;
      const int rows = std::max(a.batch(), b.batch());
      const bool a_arr = is_array_type(a.type);
      const bool b_arr = is_array_type(b.type);
      const int cols = a_arr ? static_cast<int>(a.mat.cols())
                             : (b_arr ? static_cast<int>(b.mat.cols()) : 1);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const double x = a_arr ? a.mat(r, c) : a.vec(r);
          const double y = b_arr ? b.mat(r, c) : b.vec(r);
          m = std::min(m, std::abs(x - y));
        }
      }
      return m;
    };
    const auto list_gap = [&](int parent) {
      const auto& a = tape.values[node.parents[static_cast<std::size_t>(parent)]];
      double m = 1e30;
      for (int r = 0; r < a.mat.rows(); ++r) {
        double top = -1e30, second = -1e30;
        for (int c = 0; c < a.mat.cols(); ++c) {
          const double v = a.mat(r, c);
          if (v > top) {
            second = top;
            top = v;
          } else if (v > second) {
            second = v;
          }
        }
        if (a.mat.cols() > 1) m = std::min(m, top - second);
      }
      return m;
    };

    switch (node.op) {
      case Op::Max:
      case Op::Min:
        if (pairwise_margin(0, 1) < kGeneralMargin) return false;
        break;
      case Op::MaxList:
      case Op::MinList:
      case Op::ArgMaxList:
        if (list_gap(0) < kGeneralMargin) return false;
        break;
      case Op::Abs:
        for (double v : vals_of(tape.values[node.parents[0]])) {
          if (std::abs(v) < kGeneralMargin) return false;
        }
        break;
      case Op::L2Dist:
        // Kink where the two operands coincide exactly.
        for (double v : vals_of(tape.values[i])) {
          if (std::abs(v) < kGeneralMargin) return false;
        }
        break;
      case Op::Div:
        for (double v : vals_of(tape.values[node.parents[1]])) {
          if (std::abs(v) < kDivMargin) return false;
        }
        break;
      case Op::Log:
        // The clamp boundary sits at kLogGuard; stay a full margin away so a
        // perturbed argument cannot cross it from either side.
        for (double v : vals_of(tape.values[node.parents[0]])) {
          if (std::abs(v - kLogGuard) < kGeneralMargin) return false;
        }
        break;
      case Op::Entropy:
      case Op::KlDiv:
        // Probabilities move multiplicatively under weight perturbations, so
        // a relative band around the guard is enough.
        for (const int par : node.parents) {
          for (double v : vals_of(tape.values[par])) {
            if (v > kLogGuard / 2 && v < kLogGuard * 2) return false;
          }
        }
        break;
      case Op::NnS2List:
      case Op::NnS2R:
      case Op::NnS2V:
      case Op::NnV2V: {
        const int e = tape.net_entry[i];
        if (e < 0) break;
        const auto& m = ps.entry(e).mlp;
        const auto& cache = tape.caches[i];
        const auto z1 = ((cache.x * m.w1).rowwise() + m.b1.transpose()).eval();
        const auto z2 = ((cache.a1 * m.w2).rowwise() + m.b2.transpose()).eval();
        if (z1.cwiseAbs().minCoeff() < kReluMargin) return false;
        if (z2.cwiseAbs().minCoeff() < kReluMargin) return false;
        break;
      }
      default:
        break;
    }
  }
  return true;
}

struct FdResult {
  bool usable = false;       // found a smooth evaluation point
  double max_rel = 0.0;      // worst relative error across checked coordinates
  int coords_checked = 0;
  std::uint64_t weight_seed = 0;
};

// Central-difference gradient check of mean batch loss against the analytic
// backward pass. Tries successive weight seeds until the smoothness audit
// accepts one, then compares up to max_coords weight coordinates per network.
inline FdResult fd_gradcheck(const LossProgram& p, std::uint64_t trial_seed,
                             int state_dim, int action_count, int hidden, int batch,
                             double h = 1e-4, int max_coords = 40,
                             int max_seed_tries = 40) {
  FdResult res;
  const std::uint64_t noise_seed = mix_seed(trial_seed, fnv1a64("noise"));

  for (int attempt = 0; attempt < max_seed_tries; ++attempt) {
    const std::uint64_t ws = mix_seed(trial_seed, static_cast<std::uint64_t>(attempt));
    ParameterStore<double> ps =
        ParameterStore<double>::init_for(p, state_dim, action_count, hidden, ws);
    Rng brng = fork_stream(ws, "bindings");
    const Bindings<double> in = random_bindings(batch, state_dim, action_count, brng);

    Tape<double> tape = eval_forward(p, in, ps, noise_seed);
    if (!smooth_at(p, tape, ps)) continue;

    const GradMap<double> grads = eval_backward(tape, ps);
    res.usable = true;
    res.weight_seed = ws;

    Rng pick = fork_stream(ws, "coords");
    for (int e = 0; e < ps.size(); ++e) {
      if (!ps.entry(e).trainable) continue;
      const std::vector<double> g = grad_coords(grads[e], ps.entry(e).mlp);
      std::vector<double*> coords = net_coords(ps.entry(e).mlp);
      const int total = static_cast<int>(coords.size());
      for (int k = 0; k < std::min(total, max_coords); ++k) {
        const int c = total <= max_coords ? k : pick.index(static_cast<std::size_t>(total));
        const double saved = *coords[static_cast<std::size_t>(c)];
        *coords[static_cast<std::size_t>(c)] = saved + h;
        const double up = eval_forward(p, in, ps, noise_seed).mean_loss();
        *coords[static_cast<std::size_t>(c)] = saved - h;
        const double dn = eval_forward(p, in, ps, noise_seed).mean_loss();
        *coords[static_cast<std::size_t>(c)] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double ad = g[static_cast<std::size_t>(c)];
        const double rel =
            std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-4});
        res.max_rel = std::max(res.max_rel, rel);
        res.coords_checked += 1;
      }
    }
    return res;
  }
  return res;
}

}  // namespace testsup
