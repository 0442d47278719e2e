#pragma once

// Graph interpreter: batched forward evaluation and reverse-mode gradients.
// The whole minibatch flows through each node at once so network applies are
// matrix-matrix products; every non-network op runs on tiny per-sample data
// and is written as plain loops.

#include <cmath>
#include <cstdint>

#include "evoloss/params.hpp"
#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"
#include "evoloss/value.hpp"

namespace evoloss {

// Guards shared by forward and backward so finite differences agree with the
// analytic gradients: clamped regions propagate zero gradient.
inline constexpr double kDivGuard = 1e-8;
inline constexpr double kLogGuard = 1e-8;

template <class S>
struct Bindings {
  using Mat = typename Batch<S>::Mat;
  using Vec = typename Batch<S>::Vec;
  Mat s_t, s_tp1;               // batch x state_dim
  std::vector<std::int32_t> a_t;
  Vec r_t, gamma;               // gamma is per-transition (0 on masked terminals)
  int batch() const { return static_cast<int>(r_t.size()); }
};

struct EvalOptions {
  // Stochastic nodes draw one value per sample; with false, one draw per
  // node is shared across the batch.
  bool per_element_noise = true;
};

template <class S>
struct Tape {
  const LossProgram* prog = nullptr;
  int batch = 0;
  std::vector<Batch<S>> values;
  std::vector<Batch<S>> adjoints;   // filled by eval_backward; zero-initialized
  std::vector<MlpCache<S>> caches;  // indexed by node, used by nn ops only
  std::vector<int> net_entry;       // node -> parameter store entry, -1 otherwise
  std::vector<char> reachable;

  // Per-sample losses (valid once forward ran and output is Float).
  const typename Batch<S>::Vec& losses() const { return values[prog->output].vec; }
  S mean_loss() const { return losses().mean(); }
};

namespace detail {

template <class S>
S guard_div(S d) {
  const S eps = static_cast<S>(kDivGuard);
  if (d >= S(0)) return d < eps ? eps : d;
  return d > -eps ? -eps : d;
}

inline int wrap_index(std::int64_t i, int len) {
  const std::int64_t m = i % len;
  return static_cast<int>(m < 0 ? m + len : m);
}

// Pull the operand pattern apart once: binary X-ops see either two scalars,
// scalar+array (either order), or two same-shaped arrays.
template <class S, class FScalar>
Batch<S> zip_broadcast(const Batch<S>& a, const Batch<S>& b, DType out_t, FScalar f) {
  Batch<S> r;
  const int batch = std::max(a.batch(), b.batch());
  if (out_t == DType::Float) {
    r = Batch<S>::scalars(Batch<S>::Vec::Zero(batch));
    for (int i = 0; i < batch; ++i) r.vec(i) = f(a.vec(i), b.vec(i));
    return r;
  }
  const bool a_arr = is_array_type(a.type);
  const bool b_arr = is_array_type(b.type);
  const auto& shape = a_arr ? a.mat : b.mat;
  r = Batch<S>::array(out_t, Batch<S>::Mat::Zero(shape.rows(), shape.cols()));
  for (int i = 0; i < shape.rows(); ++i) {
    for (int j = 0; j < shape.cols(); ++j) {
      const S x = a_arr ? a.mat(i, j) : a.vec(i);
      const S y = b_arr ? b.mat(i, j) : b.vec(i);
      r.mat(i, j) = f(x, y);
    }
  }
  return r;
}

}  // namespace detail

// Evaluates every node reachable from the output. The program must be
// type-consistent (derive_types(...).evaluable); scalar output is not
// required here so behavior probes can hash list-valued programs too.
template <class S>
Tape<S> eval_forward(const LossProgram& p, const Bindings<S>& in,
                     const ParameterStore<S>& ps, std::uint64_t noise_seed,
                     const EvalOptions& opt = {}) {
  const TypeInfo info = derive_types(p);
  if (!info.evaluable) throw ContractError("eval_forward: program is not type-consistent");
  const int batch = in.batch();
  if (batch < 1) throw ContractError("eval_forward: empty batch");
  if (in.s_t.rows() != batch || in.s_tp1.rows() != batch ||
      static_cast<int>(in.a_t.size()) != batch || in.gamma.size() != batch) {
    throw ContractError("eval_forward: binding sizes disagree");
  }
  if (in.s_t.cols() != ps.state_dim()) {
    throw ContractError("eval_forward: state dim mismatch with parameter store");
  }

  using Mat = typename Batch<S>::Mat;
  using Vec = typename Batch<S>::Vec;
  Tape<S> tape;
  tape.prog = &p;
  tape.batch = batch;
  const int n = static_cast<int>(p.nodes.size());
  tape.values.resize(n);
  tape.caches.resize(n);
  tape.net_entry.assign(n, -1);
  tape.reachable = reachable_from_output(p);

  const int list_len = ps.action_count();

  for (int i = 0; i < n; ++i) {
    if (!tape.reachable[i]) continue;
    const Node& node = p.nodes[i];
    if (node.kind == NodeKind::Param) continue;
    Batch<S>& out = tape.values[i];

    if (node.kind == NodeKind::Input) {
      switch (node.input_slot) {
        case 0: out = Batch<S>::array(DType::State, in.s_t); break;
        case 1: out = Batch<S>::actions(in.a_t); break;
        case 2: out = Batch<S>::scalars(in.r_t); break;
        case 3: out = Batch<S>::array(DType::State, in.s_tp1); break;
        case 4: out = Batch<S>::scalars(in.gamma); break;
      }
      continue;
    }

    const DType out_t = *info.types[i];
    auto val = [&](int k) -> const Batch<S>& { return tape.values[node.parents[k]]; };

    switch (node.op) {
      case Op::Add:
        out = detail::zip_broadcast(val(0), val(1), out_t, [](S a, S b) { return a + b; });
        break;
      case Op::Sub:
        out = detail::zip_broadcast(val(0), val(1), out_t, [](S a, S b) { return a - b; });
        break;
      case Op::Max:
        out = detail::zip_broadcast(val(0), val(1), out_t,
                                    [](S a, S b) { return a >= b ? a : b; });
        break;
      case Op::Min:
        out = detail::zip_broadcast(val(0), val(1), out_t,
                                    [](S a, S b) { return a <= b ? a : b; });
        break;
      case Op::Div:
        out = detail::zip_broadcast(val(0), val(1), out_t,
                                    [](S a, S b) { return a / detail::guard_div(b); });
        break;
      case Op::Dot: {
        const Batch<S>& a = val(0);
        const Batch<S>& b = val(1);
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          S acc = S(0);
          if (is_array_type(a.type) && is_array_type(b.type)) {
            for (int j = 0; j < a.mat.cols(); ++j) acc += a.mat(r, j) * b.mat(r, j);
          } else if (is_array_type(a.type)) {
            acc = b.vec(r) * a.mat.row(r).sum();
          } else if (is_array_type(b.type)) {
            acc = a.vec(r) * b.mat.row(r).sum();
          } else {
            acc = a.vec(r) * b.vec(r);
          }
          out.vec(r) = acc;
        }
        break;
      }
      case Op::L2Dist: {
        const Batch<S>& a = val(0);
        const Batch<S>& b = val(1);
        out = Batch<S>::scalars(Vec::Zero(batch));
        const bool a_arr = is_array_type(a.type);
        const bool b_arr = is_array_type(b.type);
        if (!a_arr && !b_arr) {
          for (int r = 0; r < batch; ++r) out.vec(r) = std::abs(a.vec(r) - b.vec(r));
        } else {
          const auto& shape = a_arr ? a.mat : b.mat;
          for (int r = 0; r < batch; ++r) {
            S acc = S(0);
            for (int j = 0; j < shape.cols(); ++j) {
              const S x = a_arr ? a.mat(r, j) : a.vec(r);
              const S y = b_arr ? b.mat(r, j) : b.vec(r);
              acc += (x - y) * (x - y);
            }
            out.vec(r) = std::sqrt(acc);
          }
        }
        break;
      }
      case Op::MaxList:
      case Op::MinList: {
        const auto& m = val(0).mat;
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          out.vec(r) = (node.op == Op::MaxList) ? m.row(r).maxCoeff() : m.row(r).minCoeff();
        }
        break;
      }
      case Op::ArgMaxList: {
        const auto& m = val(0).mat;
        std::vector<std::int32_t> idx(batch);
        for (int r = 0; r < batch; ++r) {
          Eigen::Index j = 0;
          m.row(r).maxCoeff(&j);  // first maximal index on ties
          idx[r] = static_cast<std::int32_t>(j);
        }
        out = Batch<S>::actions(std::move(idx));
        break;
      }
      case Op::SelectList: {
        const auto& m = val(0).mat;
        const auto& idx = val(1).act;
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          out.vec(r) = m(r, detail::wrap_index(idx[r], static_cast<int>(m.cols())));
        }
        break;
      }
      case Op::MeanList: {
        const auto& m = val(0).mat;
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) out.vec(r) = m.row(r).mean();
        break;
      }
      case Op::VarList: {  // population variance
        const auto& m = val(0).mat;
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          const S mu = m.row(r).mean();
          S acc = S(0);
          for (int j = 0; j < m.cols(); ++j) acc += (m(r, j) - mu) * (m(r, j) - mu);
          out.vec(r) = acc / static_cast<S>(m.cols());
        }
        break;
      }
      case Op::Log: {
        const S eps = static_cast<S>(kLogGuard);
        auto f = [eps](S x) { return std::log(x < eps ? eps : x); };
        const Batch<S>& a = val(0);
        if (out_t == DType::Float) {
          out = Batch<S>::scalars(a.vec.unaryExpr(f));
        } else {
          out = Batch<S>::array(out_t, a.mat.unaryExpr(f));
        }
        break;
      }
      case Op::Exp: {
        auto f = [](S x) { return std::exp(x); };
        const Batch<S>& a = val(0);
        out = (out_t == DType::Float) ? Batch<S>::scalars(a.vec.unaryExpr(f))
                                      : Batch<S>::array(out_t, a.mat.unaryExpr(f));
        break;
      }
      case Op::Abs: {
        auto f = [](S x) { return std::abs(x); };
        const Batch<S>& a = val(0);
        out = (out_t == DType::Float) ? Batch<S>::scalars(a.vec.unaryExpr(f))
                                      : Batch<S>::array(out_t, a.mat.unaryExpr(f));
        break;
      }
      case Op::MulTenth: {
        auto f = [](S x) { return static_cast<S>(0.1) * x; };
        const Batch<S>& a = val(0);
        out = (out_t == DType::Float) ? Batch<S>::scalars(a.vec.unaryExpr(f))
                                      : Batch<S>::array(out_t, a.mat.unaryExpr(f));
        break;
      }
      case Op::Softmax: {
        const auto& m = val(0).mat;
        Mat pm(batch, m.cols());
        for (int r = 0; r < batch; ++r) {
          const S mx = m.row(r).maxCoeff();
          S z = S(0);
          for (int j = 0; j < m.cols(); ++j) {
            pm(r, j) = std::exp(m(r, j) - mx);
            z += pm(r, j);
          }
          pm.row(r) /= z;
        }
        out = Batch<S>::array(DType::Probability, std::move(pm));
        break;
      }
      case Op::KlDiv: {
        const auto& pa = val(0).mat;
        const auto& pb = val(1).mat;
        const S eps = static_cast<S>(kLogGuard);
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          S acc = S(0);
          for (int j = 0; j < pa.cols(); ++j) {
            const S x = pa(r, j) < eps ? eps : pa(r, j);
            const S y = pb(r, j) < eps ? eps : pb(r, j);
            acc += pa(r, j) * (std::log(x) - std::log(y));
          }
          out.vec(r) = acc;
        }
        break;
      }
      case Op::Entropy: {
        const auto& m = val(0).mat;
        const S eps = static_cast<S>(kLogGuard);
        out = Batch<S>::scalars(Vec::Zero(batch));
        for (int r = 0; r < batch; ++r) {
          S acc = S(0);
          for (int j = 0; j < m.cols(); ++j) {
            acc -= m(r, j) * std::log(m(r, j) < eps ? eps : m(r, j));
          }
          out.vec(r) = acc;
        }
        break;
      }
      case Op::Const:
        out = Batch<S>::scalars(Vec::Constant(batch, static_cast<S>(node.const_value)));
        break;
      case Op::Normal:
      case Op::Uniform: {
        Vec v(batch);
        if (opt.per_element_noise) {
          for (int r = 0; r < batch; ++r) {
            Rng rng = fork_stream(noise_seed, "node", static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(r));
            v(r) = static_cast<S>(node.op == Op::Normal ? rng.normal() : rng.uniform());
          }
        } else {
          Rng rng = fork_stream(noise_seed, "node", static_cast<std::uint64_t>(i), 0);
          v.setConstant(static_cast<S>(node.op == Op::Normal ? rng.normal() : rng.uniform()));
        }
        out = Batch<S>::scalars(std::move(v));
        break;
      }
      case Op::NnS2List:
      case Op::NnS2R:
      case Op::NnS2V:
      case Op::NnV2V: {
        const Node& pnode = p.nodes[node.parents[0]];
        const int entry = ps.index_of(pnode.net_id);
        if (entry < 0) throw ContractError("eval_forward: net missing from store: " + pnode.net_id);
        tape.net_entry[i] = entry;
        const Mat y = mlp_forward(ps.entry(entry).mlp, val(1).mat, &tape.caches[i]);
        if (node.op == Op::NnS2R) {
          out = Batch<S>::scalars(y.col(0));
        } else if (node.op == Op::NnS2List) {
          if (y.cols() != list_len) throw ContractError("eval_forward: list width mismatch");
          out = Batch<S>::array(DType::FloatList, y);
        } else {
          out = Batch<S>::array(DType::Vector, y);
        }
        break;
      }
    }
  }
  return tape;
}

namespace detail {

// True per node when its value depends on some trainable network's weights
// through gradient-passing edges. Backward skips everything else.
template <class S>
std::vector<char> trainable_dependence(const LossProgram& p, const Tape<S>& tape,
                                       const ParameterStore<S>& ps) {
  const int n = static_cast<int>(p.nodes.size());
  std::vector<char> dep(n, 0);
  for (int i = 0; i < n; ++i) {
    if (!tape.reachable[i]) continue;
    const Node& node = p.nodes[i];
    if (node.kind != NodeKind::OpNode) continue;
    const OpInfo& oi = op_info(node.op);
    bool d = false;
    if (oi.is_nn && ps.entry(tape.net_entry[i]).trainable) d = true;
    int data_index = 0;
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      if (oi.is_nn && k == 0) continue;
      if (dep[node.parents[k]] && op_passes_gradient(node.op, data_index)) d = true;
      ++data_index;
    }
    dep[i] = d ? 1 : 0;
  }
  return dep;
}

template <class S>
void ensure_adjoint(Tape<S>& tape, int i) {
  Batch<S>& adj = tape.adjoints[i];
  const Batch<S>& v = tape.values[i];
  if (adj.batch() > 0 || v.type == DType::Action) return;
  adj.type = v.type;
  if (is_array_type(v.type)) {
    adj.mat = Batch<S>::Mat::Zero(v.mat.rows(), v.mat.cols());
  } else {
    adj.vec = Batch<S>::Vec::Zero(v.vec.size());
  }
}

}  // namespace detail

// Gradient of the mean per-sample loss with respect to every trainable net.
// Requires a Float-typed output. Adjoints are filled for nodes on a
// trainable-gradient path; all other adjoints stay zero.
template <class S>
GradMap<S> eval_backward(Tape<S>& tape, const ParameterStore<S>& ps) {
  const LossProgram& p = *tape.prog;
  if (tape.values[p.output].type != DType::Float) {
    throw ContractError("eval_backward: output is not Float");
  }
  const int n = static_cast<int>(p.nodes.size());
  const int batch = tape.batch;
  tape.adjoints.assign(n, {});
  for (int i = 0; i < n; ++i) {
    if (tape.reachable[i] && p.nodes[i].kind != NodeKind::Param) detail::ensure_adjoint(tape, i);
  }
  GradMap<S> grads = make_grad_map(ps);
  const std::vector<char> dep = detail::trainable_dependence(p, tape, ps);

  tape.adjoints[p.output].vec.setConstant(static_cast<S>(1.0 / batch));

  using Mat = typename Batch<S>::Mat;

  for (int i = n - 1; i >= 0; --i) {
    if (!tape.reachable[i] || p.nodes[i].kind != NodeKind::OpNode) continue;
    if (!dep[i]) continue;
    const Node& node = p.nodes[i];
    const Batch<S>& g = tape.adjoints[i];
    auto val = [&](int k) -> const Batch<S>& { return tape.values[node.parents[k]]; };
    auto adj = [&](int k) -> Batch<S>& { return tape.adjoints[node.parents[k]]; };
    auto parent_dep = [&](int k) {
      return dep[node.parents[k]] && p.nodes[node.parents[k]].kind == NodeKind::OpNode;
    };

    // Adds d(out)/d(parent k) contributions, reducing over broadcast dims
    // when the parent is Float. fa/fb give local derivatives per element.
    auto binary_back = [&](auto fa, auto fb) {
      const Batch<S>& a = val(0);
      const Batch<S>& b = val(1);
      const bool out_arr = is_array_type(tape.values[i].type);
      const int cols = out_arr ? static_cast<int>(tape.values[i].mat.cols()) : 1;
      for (int which = 0; which < 2; ++which) {
        if (!parent_dep(which)) continue;
        Batch<S>& target = adj(which);
        const bool t_arr = is_array_type(target.type);
        for (int r = 0; r < batch; ++r) {
          for (int j = 0; j < cols; ++j) {
            const S gv = out_arr ? g.mat(r, j) : g.vec(r);
            const S x = is_array_type(a.type) ? a.mat(r, j) : a.vec(r);
            const S y = is_array_type(b.type) ? b.mat(r, j) : b.vec(r);
            const S local = which == 0 ? fa(x, y) : fb(x, y);
            if (t_arr) {
              target.mat(r, j) += gv * local;
            } else {
              target.vec(r) += gv * local;
            }
          }
        }
      }
    };

    switch (node.op) {
      case Op::Add:
        binary_back([](S, S) { return S(1); }, [](S, S) { return S(1); });
        break;
      case Op::Sub:
        binary_back([](S, S) { return S(1); }, [](S, S) { return S(-1); });
        break;
      case Op::Max:  // ties feed the first argument
        binary_back([](S x, S y) { return x >= y ? S(1) : S(0); },
                    [](S x, S y) { return x >= y ? S(0) : S(1); });
        break;
      case Op::Min:
        binary_back([](S x, S y) { return x <= y ? S(1) : S(0); },
                    [](S x, S y) { return x <= y ? S(0) : S(1); });
        break;
      case Op::Div:
        binary_back([](S, S y) { return S(1) / detail::guard_div(y); },
                    [](S x, S y) {
                      const S eps = static_cast<S>(kDivGuard);
                      if (y >= eps || y <= -eps) return -x / (y * y);
                      return S(0);  // clamped denominator is locally constant
                    });
        break;
      case Op::Dot: {
        const Batch<S>& a = val(0);
        const Batch<S>& b = val(1);
        const bool a_arr = is_array_type(a.type);
        const bool b_arr = is_array_type(b.type);
        for (int which = 0; which < 2; ++which) {
          if (!parent_dep(which)) continue;
          Batch<S>& target = adj(which);
          const Batch<S>& self = which == 0 ? a : b;
          const Batch<S>& other = which == 0 ? b : a;
          const bool self_arr = which == 0 ? a_arr : b_arr;
          const bool other_arr = which == 0 ? b_arr : a_arr;
          for (int r = 0; r < batch; ++r) {
            const S gv = g.vec(r);
            if (self_arr && other_arr) {
              target.mat.row(r) += gv * other.mat.row(r);
            } else if (self_arr) {  // z = s * sum(self)
              target.mat.row(r).array() += gv * other.vec(r);
            } else if (other_arr) {
              target.vec(r) += gv * other.mat.row(r).sum();
            } else {
              target.vec(r) += gv * other.vec(r);
            }
          }
        }
        break;
      }
      case Op::L2Dist: {
        const Batch<S>& a = val(0);
        const Batch<S>& b = val(1);
        const bool a_arr = is_array_type(a.type);
        const bool b_arr = is_array_type(b.type);
        const int cols = (a_arr || b_arr) ? static_cast<int>((a_arr ? a.mat : b.mat).cols()) : 1;
        for (int r = 0; r < batch; ++r) {
          const S z = tape.values[i].vec(r);
          if (z <= static_cast<S>(kDivGuard)) continue;  // flat point
          const S gv = g.vec(r) / z;
          for (int j = 0; j < cols; ++j) {
            const S x = a_arr ? a.mat(r, j) : a.vec(r);
            const S y = b_arr ? b.mat(r, j) : b.vec(r);
            const S d = x - y;
            if (parent_dep(0)) {
              if (a_arr) {
                adj(0).mat(r, j) += gv * d;
              } else {
                adj(0).vec(r) += gv * d;
              }
            }
            if (parent_dep(1)) {
              if (b_arr) {
                adj(1).mat(r, j) -= gv * d;
              } else {
                adj(1).vec(r) -= gv * d;
              }
            }
          }
        }
        break;
      }
      case Op::MaxList:
      case Op::MinList: {
        if (!parent_dep(0)) break;
        const auto& m = val(0).mat;
        for (int r = 0; r < batch; ++r) {
          Eigen::Index j = 0;
          if (node.op == Op::MaxList) {
            m.row(r).maxCoeff(&j);
          } else {
            m.row(r).minCoeff(&j);
          }
          adj(0).mat(r, j) += g.vec(r);
        }
        break;
      }
      case Op::SelectList: {
        if (!parent_dep(0)) break;
        const auto& m = val(0).mat;
        const auto& idx = val(1).act;
        for (int r = 0; r < batch; ++r) {
          adj(0).mat(r, detail::wrap_index(idx[r], static_cast<int>(m.cols()))) += g.vec(r);
        }
        break;
      }
      case Op::MeanList: {
        if (!parent_dep(0)) break;
        const auto& m = val(0).mat;
        const S inv = S(1) / static_cast<S>(m.cols());
        for (int r = 0; r < batch; ++r) adj(0).mat.row(r).array() += g.vec(r) * inv;
        break;
      }
      case Op::VarList: {
        if (!parent_dep(0)) break;
        const auto& m = val(0).mat;
        const S inv = S(2) / static_cast<S>(m.cols());
        for (int r = 0; r < batch; ++r) {
          const S mu = m.row(r).mean();
          for (int j = 0; j < m.cols(); ++j) {
            adj(0).mat(r, j) += g.vec(r) * inv * (m(r, j) - mu);
          }
        }
        break;
      }
      case Op::Log: {
        if (!parent_dep(0)) break;
        const S eps = static_cast<S>(kLogGuard);
        auto df = [eps](S x) { return x < eps ? S(0) : S(1) / x; };
        const Batch<S>& a = val(0);
        if (a.type == DType::Float) {
          adj(0).vec += g.vec.cwiseProduct(a.vec.unaryExpr(df));
        } else {
          adj(0).mat += g.mat.cwiseProduct(a.mat.unaryExpr(df));
        }
        break;
      }
      case Op::Exp: {
        if (!parent_dep(0)) break;
        const Batch<S>& z = tape.values[i];
        if (z.type == DType::Float) {
          adj(0).vec += g.vec.cwiseProduct(z.vec);
        } else {
          adj(0).mat += g.mat.cwiseProduct(z.mat);
        }
        break;
      }
      case Op::Abs: {
        if (!parent_dep(0)) break;
        auto df = [](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); };
        const Batch<S>& a = val(0);
        if (a.type == DType::Float) {
          adj(0).vec += g.vec.cwiseProduct(a.vec.unaryExpr(df));
        } else {
          adj(0).mat += g.mat.cwiseProduct(a.mat.unaryExpr(df));
        }
        break;
      }
      case Op::MulTenth: {
        if (!parent_dep(0)) break;
        const S k = static_cast<S>(0.1);
        if (val(0).type == DType::Float) {
          adj(0).vec += k * g.vec;
        } else {
          adj(0).mat += k * g.mat;
        }
        break;
      }
      case Op::Softmax: {
        if (!parent_dep(0)) break;
        const auto& prob = tape.values[i].mat;
        for (int r = 0; r < batch; ++r) {
          const S dotgp = g.mat.row(r).dot(prob.row(r));
          for (int j = 0; j < prob.cols(); ++j) {
            adj(0).mat(r, j) += prob(r, j) * (g.mat(r, j) - dotgp);
          }
        }
        break;
      }
      case Op::KlDiv: {
        const auto& pa = val(0).mat;
        const auto& pb = val(1).mat;
        const S eps = static_cast<S>(kLogGuard);
        for (int r = 0; r < batch; ++r) {
          const S gv = g.vec(r);
          for (int j = 0; j < pa.cols(); ++j) {
            const S x = pa(r, j);
            const S y = pb(r, j);
            const S lx = std::log(x < eps ? eps : x);
            const S ly = std::log(y < eps ? eps : y);
            if (parent_dep(0)) {
              adj(0).mat(r, j) += gv * (lx - ly + (x < eps ? S(0) : S(1)));
            }
            if (parent_dep(1)) {
              adj(1).mat(r, j) += gv * (y < eps ? S(0) : -x / y);
            }
          }
        }
        break;
      }
      case Op::Entropy: {
        if (!parent_dep(0)) break;
        const auto& m = val(0).mat;
        const S eps = static_cast<S>(kLogGuard);
        for (int r = 0; r < batch; ++r) {
          for (int j = 0; j < m.cols(); ++j) {
            const S x = m(r, j);
            const S lx = std::log(x < eps ? eps : x);
            adj(0).mat(r, j) += g.vec(r) * (-lx - (x < eps ? S(0) : S(1)));
          }
        }
        break;
      }
      case Op::ArgMaxList:
      case Op::Const:
      case Op::Normal:
      case Op::Uniform:
        break;  // no gradient through these
      case Op::NnS2List:
      case Op::NnS2R:
      case Op::NnS2V:
      case Op::NnV2V: {
        const int entry = tape.net_entry[i];
        const auto& e = ps.entry(entry);
        Mat dy;
        if (node.op == Op::NnS2R) {
          dy = g.vec;
        } else {
          dy = g.mat;
        }
        MlpGrads<S>* gm = e.trainable ? &grads[entry] : nullptr;
        Mat dx;
        const bool want_dx = parent_dep(1);
        mlp_backward(e.mlp, tape.caches[i], dy, gm, want_dx ? &dx : nullptr);
        if (want_dx) adj(1).mat += dx;
        break;
      }
    }
  }
  return grads;
}

}  // namespace evoloss
