#pragma once

// Two-hidden-layer ReLU MLP with Adam. Templated on scalar so training runs
// in float while gradient checking and hashing run in double.

#include <Eigen/Core>
#include <cmath>

#include "evoloss/rng.hpp"

namespace evoloss {

template <class S>
struct Mlp {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  Mat w1, w2, w3;  // (in,h) (h,h) (h,out)
  Vec b1, b2, b3;

  int in() const { return static_cast<int>(w1.rows()); }
  int hidden() const { return static_cast<int>(w1.cols()); }
  int out() const { return static_cast<int>(w3.cols()); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static Mlp init(int in, int hidden, int out, Rng& rng) {
    Mlp m;
    auto fill = [&rng](typename Mlp::Mat& w, int r, int c) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(r));
      w.resize(r, c);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
      }
    };
    fill(m.w1, in, hidden);
    fill(m.w2, hidden, hidden);
    fill(m.w3, hidden, out);
    m.b1 = Vec::Zero(hidden);
    m.b2 = Vec::Zero(hidden);
    m.b3 = Vec::Zero(out);
    return m;
  }
};

template <class S>
struct MlpCache {
  typename Mlp<S>::Mat x, a1, a2;  // input and post-ReLU activations
};

// Rows of X are samples. Cache may be null for inference-only calls.
template <class S>
typename Mlp<S>::Mat mlp_forward(const Mlp<S>& m, const typename Mlp<S>::Mat& x,
                                 MlpCache<S>* cache = nullptr) {
  using Mat = typename Mlp<S>::Mat;
  Mat a1 = ((x * m.w1).rowwise() + m.b1.transpose()).cwiseMax(S(0));
  Mat a2 = ((a1 * m.w2).rowwise() + m.b2.transpose()).cwiseMax(S(0));
  Mat y = (a2 * m.w3).rowwise() + m.b3.transpose();
  if (cache) {
    cache->x = x;
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
  }
  return y;
}

template <class S>
struct MlpGrads {
  typename Mlp<S>::Mat w1, w2, w3;
  typename Mlp<S>::Vec b1, b2, b3;
  bool allocated = false;

  void ensure_shape(const Mlp<S>& m) {
    if (allocated) return;
    w1.setZero(m.w1.rows(), m.w1.cols());
    w2.setZero(m.w2.rows(), m.w2.cols());
    w3.setZero(m.w3.rows(), m.w3.cols());
    b1.setZero(m.b1.size());
    b2.setZero(m.b2.size());
    b3.setZero(m.b3.size());
    allocated = true;
  }
};

// Accumulates weight gradients into `grads` (if non-null) and returns dX when
// `dx` is non-null. ReLU subgradient at 0 is 0.
template <class S>
void mlp_backward(const Mlp<S>& m, const MlpCache<S>& cache,
                  const typename Mlp<S>::Mat& dy, MlpGrads<S>* grads,
                  typename Mlp<S>::Mat* dx) {
  using Mat = typename Mlp<S>::Mat;
  if (grads) {
    grads->ensure_shape(m);
    grads->w3.noalias() += cache.a2.transpose() * dy;
    grads->b3 += dy.colwise().sum().transpose();
  }
  Mat d2 = (dy * m.w3.transpose()).cwiseProduct(
      (cache.a2.array() > S(0)).template cast<S>().matrix());
  if (grads) {
    grads->w2.noalias() += cache.a1.transpose() * d2;
    grads->b2 += d2.colwise().sum().transpose();
  }
  Mat d1 = (d2 * m.w2.transpose()).cwiseProduct(
      (cache.a1.array() > S(0)).template cast<S>().matrix());
  if (grads) {
    grads->w1.noalias() += cache.x.transpose() * d1;
    grads->b1 += d1.colwise().sum().transpose();
  }
  if (dx) dx->noalias() = d1 * m.w1.transpose();
}

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  MlpGrads<S> m, v;  // first/second moment estimates, same shapes as the net
  long t = 0;
};

template <class S>
void adam_step(Mlp<S>& net, AdamState<S>& state, const MlpGrads<S>& g,
               const AdamHyper& hp) {
  if (!g.allocated) return;
  state.m.ensure_shape(net);
  state.v.ensure_shape(net);
  state.t += 1;
  const S b1 = static_cast<S>(hp.beta1);
  const S b2 = static_cast<S>(hp.beta2);
  const S corr1 = static_cast<S>(1.0 - std::pow(hp.beta1, static_cast<double>(state.t)));
  const S corr2 = static_cast<S>(1.0 - std::pow(hp.beta2, static_cast<double>(state.t)));
  const S lr = static_cast<S>(hp.lr);
  const S eps = static_cast<S>(hp.eps);

  auto update = [&](auto& w, auto& mm, auto& vv, const auto& gg) {
    mm = b1 * mm + (S(1) - b1) * gg;
    vv = b2 * vv + (S(1) - b2) * gg.cwiseProduct(gg);
    w.array() -=
        lr * (mm.array() / corr1) / ((vv.array() / corr2).sqrt() + eps);
  };
  update(net.w1, state.m.w1, state.v.w1, g.w1);
  update(net.w2, state.m.w2, state.v.w2, g.w2);
  update(net.w3, state.m.w3, state.v.w3, g.w3);
  update(net.b1, state.m.b1, state.v.b1, g.b1);
  update(net.b2, state.m.b2, state.v.b2, g.b2);
  update(net.b3, state.m.b3, state.v.b3, g.b3);
}

}  // namespace evoloss
