#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "evoloss/algorithms.hpp"
#include "evoloss/interp.hpp"
#include "evoloss/params.hpp"
#include "evoloss/sampler.hpp"
#include "support.hpp"

using namespace evoloss;

namespace {
constexpr int kSt = 0, kAt = 1, kRt = 2, kStp1 = 3, kGamma = 4, kQ = 5;

int push(LossProgram& p, Op op, std::vector<int> parents, double c = 0.0) {
  p.nodes.push_back(Node::make_op(op, std::move(parents), c));
  return static_cast<int>(p.nodes.size()) - 1;
}

// Two-sample batch over a 4-dim state space with hand-picked rewards.
Bindings<double> two_sample_bindings() {
  Bindings<double> b;
  b.s_t.setConstant(2, 4, 0.25);
  b.s_tp1.setConstant(2, 4, -0.5);
  b.a_t = {0, 1};
  b.r_t.resize(2);
  b.r_t << 0.1, 0.2;
  b.gamma.resize(2);
  b.gamma << 0.9, 0.9;
  return b;
}

// Store where Q(s,.) == [0.5, 0.2] and Q_target(s,.) == [0.3, 0.1] exactly.
ParameterStore<double> stub_store(const LossProgram& p) {
  auto ps = ParameterStore<double>::init_for(p, 4, 2, 8, 1);
  testsup::zero_store(ps);
  ps.entry(ps.index_of("q")).mlp.b3 << 0.5, 0.2;
  ps.entry(ps.index_of("q_target")).mlp.b3 << 0.3, 0.1;
  return ps;
}
}  // namespace

TEST_SUITE_BEGIN("interp");

TEST_CASE("dqn forward on stub weights matches hand arithmetic") {
  // Sample 0: Q(s,a)=0.5, Y = 0.1 + 0.9*0.3 = 0.37, delta = 0.13.
  // Sample 1: Q(s,a)=0.2, Y = 0.2 + 0.9*0.3 = 0.47, delta = -0.27.
  const LossProgram p = make_dqn();
  const auto ps = stub_store(p);
  const auto tape = eval_forward(p, two_sample_bindings(), ps, 0);
  CHECK(tape.losses()(0) == doctest::Approx(0.0169).epsilon(1e-12));
  CHECK(tape.losses()(1) == doctest::Approx(0.0729).epsilon(1e-12));
  CHECK(tape.mean_loss() == doctest::Approx(0.0449).epsilon(1e-12));
}

TEST_CASE("dqn backward puts 2*delta/B on the selected output biases") {
  const LossProgram p = make_dqn();
  auto ps = stub_store(p);
  auto tape = eval_forward(p, two_sample_bindings(), ps, 0);
  const GradMap<double> grads = eval_backward(tape, ps);

  const int qi = ps.index_of("q");
  const int ti = ps.index_of("q_target");
  REQUIRE(grads[qi].allocated);
  // d(mean loss)/d b3[a] = 2*delta_i / B for the sample selecting action a.
  CHECK(grads[qi].b3(0) == doctest::Approx(0.13).epsilon(1e-12));
  CHECK(grads[qi].b3(1) == doctest::Approx(-0.27).epsilon(1e-12));
  // Zeroed weights kill every other path.
  CHECK(grads[qi].w3.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads[qi].w1.cwiseAbs().maxCoeff() == 0.0);
  // The frozen target network is pruned from the backward pass entirely.
  CHECK_FALSE(grads[ti].allocated);
}

TEST_CASE("gamma bindings are per-transition: masked rows drop the bootstrap") {
  const LossProgram p = make_dqn();
  const auto ps = stub_store(p);
  auto in = two_sample_bindings();
  in.gamma(1) = 0.0;  // sample 1 is terminal
  const auto tape = eval_forward(p, in, ps, 0);
  // Sample 1 target collapses to r = 0.2, delta = 0.0, loss = 0.
  CHECK(tape.losses()(0) == doctest::Approx(0.0169).epsilon(1e-12));
  CHECK(tape.losses()(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("float broadcasts against state arrays") {
  LossProgram p = make_base_program();
  const int sum = push(p, Op::Add, {kSt, kGamma});   // state + float
  const int dot = push(p, Op::Dot, {sum, sum});      // inner product -> float
  p.output = dot;
  const auto ps = stub_store(p);
  const auto tape = eval_forward(p, two_sample_bindings(), ps, 0);
  // Row 0: each of 4 entries is 0.25 + 0.9 = 1.15; dot = 4 * 1.15^2 = 5.29.
  CHECK(tape.values[sum].mat(0, 0) == doctest::Approx(1.15).epsilon(1e-12));
  CHECK(tape.losses()(0) == doctest::Approx(5.29).epsilon(1e-12));
}

TEST_CASE("select_list wraps out-of-range action indices") {
  const LossProgram p = make_dqn();
  const auto ps = stub_store(p);
  auto in = two_sample_bindings();
  in.a_t = {5, -1};  // 2 actions: wrap to 1 and 1
  const auto tape = eval_forward(p, in, ps, 0);
  // Both samples now select Q(s,1) = 0.2.
  // Sample 0: delta = 0.2 - 0.37 = -0.17; loss 0.0289.
  CHECK(tape.losses()(0) == doctest::Approx(0.0289).epsilon(1e-12));
}

TEST_CASE("max and min ties route gradient to the first operand") {
  Bindings<double> in = two_sample_bindings();
  in.r_t.setZero();

  LossProgram p = make_base_program();
  const int qs = push(p, Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, Op::SelectList, {qs, kAt});
  p.output = push(p, Op::Max, {qsa, qsa});
  auto ps = stub_store(p);
  auto tape = eval_forward(p, in, ps, 0);
  auto grads = eval_backward(tape, ps);
  // A tie: only the first operand's path gets the adjoint, so the bias grad
  // is 1/B, not 2/B.
  CHECK(grads[ps.index_of("q")].b3(0) == doctest::Approx(0.5).epsilon(1e-12));

  LossProgram q = make_base_program();
  const int qs2 = push(q, Op::NnS2List, {kQ, kSt});
  const int qsa2 = push(q, Op::SelectList, {qs2, kAt});
  q.output = push(q, Op::Add, {qsa2, qsa2});
  auto ps2 = stub_store(q);
  auto tape2 = eval_forward(q, in, ps2, 0);
  auto grads2 = eval_backward(tape2, ps2);
  CHECK(grads2[ps2.index_of("q")].b3(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("entropy of a uniform two-action softmax is ln 2") {
  LossProgram p = make_base_program();
  const int qs = push(p, Op::NnS2List, {kQ, kSt});
  const int sm = push(p, Op::Softmax, {qs});
  p.output = push(p, Op::Entropy, {sm});
  auto ps = stub_store(p);
  ps.entry(ps.index_of("q")).mlp.b3 << 0.4, 0.4;  // equal logits
  const auto tape = eval_forward(p, two_sample_bindings(), ps, 0);
  CHECK(tape.mean_loss() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("division guard keeps forward and backward finite and consistent") {
  LossProgram p = make_base_program();
  const int qs = push(p, Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, Op::SelectList, {qs, kAt});
  const int zero = push(p, Op::Sub, {kRt, kRt});
  p.output = push(p, Op::Div, {qsa, zero});
  auto ps = stub_store(p);
  Bindings<double> in = two_sample_bindings();
  in.a_t = {0, 0};
  auto tape = eval_forward(p, in, ps, 0);
  // Denominator clamps to +1e-8: forward = 0.5e8, gradient = 1e8 / B each.
  CHECK(tape.losses()(0) == doctest::Approx(0.5e8).epsilon(1e-9));
  auto grads = eval_backward(tape, ps);
  CHECK(grads[ps.index_of("q")].b3(0) == doctest::Approx(1e8).epsilon(1e-9));
  CHECK(std::isfinite(grads[ps.index_of("q")].b3(0)));
}

TEST_CASE("log guard clamps the argument and zeroes the clamped gradient") {
  LossProgram p = make_base_program();
  const int qs = push(p, Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, Op::SelectList, {qs, kAt});
  p.output = push(p, Op::Log, {qsa});
  Bindings<double> in = two_sample_bindings();
  in.a_t = {0, 0};

  auto ps = stub_store(p);  // Q(s,0) = 0.5 > guard: smooth region
  auto tape = eval_forward(p, in, ps, 0);
  CHECK(tape.mean_loss() == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  auto grads = eval_backward(tape, ps);
  CHECK(grads[ps.index_of("q")].b3(0) == doctest::Approx(2.0).epsilon(1e-12));

  ps.entry(ps.index_of("q")).mlp.b3 << -3.0, 0.2;  // below the guard
  tape = eval_forward(p, in, ps, 0);
  CHECK(tape.mean_loss() == doctest::Approx(std::log(1e-8)).epsilon(1e-12));
  grads = eval_backward(tape, ps);
  CHECK(grads[ps.index_of("q")].b3(0) == 0.0);
}

TEST_CASE("noise nodes are a pure function of seed, node and row") {
  LossProgram p = make_base_program();
  p.output = push(p, Op::Normal, {});
  const auto ps = stub_store(p);
  const auto in = two_sample_bindings();

  const auto a = eval_forward(p, in, ps, 42);
  const auto b = eval_forward(p, in, ps, 42);
  const auto c = eval_forward(p, in, ps, 43);
  CHECK(a.losses()(0) == b.losses()(0));
  CHECK(a.losses()(1) == b.losses()(1));
  CHECK(a.losses()(0) != c.losses()(0));
  // Per-element mode draws independently per row.
  CHECK(a.losses()(0) != a.losses()(1));

  EvalOptions shared;
  shared.per_element_noise = false;
  const auto d = eval_forward(p, in, ps, 42, shared);
  CHECK(d.losses()(0) == d.losses()(1));
}

TEST_CASE("uniform noise stays in [0,1)") {
  LossProgram p = make_base_program();
  p.output = push(p, Op::Uniform, {});
  const auto ps = stub_store(p);
  const auto in = two_sample_bindings();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto tape = eval_forward(p, in, ps, seed);
    for (int i = 0; i < 2; ++i) {
      REQUIRE(tape.losses()(i) >= 0.0);
      REQUIRE(tape.losses()(i) < 1.0);
    }
  }
}

TEST_CASE("batched evaluation equals averaged per-sample evaluation") {
  Rng rng(321);
  int tested = 0;
  while (tested < 12) {
    const LossProgram p = sample_program(20, rng);
    bool stochastic = false;
    for (const Node& n : p.nodes) {
      stochastic = stochastic || (n.kind == NodeKind::OpNode &&
                                  (n.op == Op::Normal || n.op == Op::Uniform));
    }
    if (stochastic) continue;  // noise draws differ between layouts by design
    ++tested;

    auto ps = ParameterStore<double>::init_for(p, 3, 2, 8, 77 + tested);
    Rng brng(900 + tested);
    const Bindings<double> in = testsup::random_bindings(4, 3, 2, brng);

    auto big = eval_forward(p, in, ps, 0);
    GradMap<double> gbig = eval_backward(big, ps);

    double mean = 0.0;
    GradMap<double> gsum = make_grad_map(ps);
    for (int i = 0; i < 4; ++i) {
      Bindings<double> one;
      one.s_t = in.s_t.row(i);
      one.s_tp1 = in.s_tp1.row(i);
      one.a_t = {in.a_t[static_cast<std::size_t>(i)]};
      one.r_t = in.r_t.segment(i, 1);
      one.gamma = in.gamma.segment(i, 1);
      auto t1 = eval_forward(p, one, ps, 0);
      mean += t1.mean_loss() / 4.0;
      GradMap<double> g1 = eval_backward(t1, ps);
      for (int e = 0; e < ps.size(); ++e) {
        if (!g1[e].allocated) continue;
        gsum[e].ensure_shape(ps.entry(e).mlp);
        gsum[e].w1 += g1[e].w1 / 4.0;
        gsum[e].b1 += g1[e].b1 / 4.0;
        gsum[e].w2 += g1[e].w2 / 4.0;
        gsum[e].b2 += g1[e].b2 / 4.0;
        gsum[e].w3 += g1[e].w3 / 4.0;
        gsum[e].b3 += g1[e].b3 / 4.0;
      }
    }
    CHECK(big.mean_loss() == doctest::Approx(mean).epsilon(1e-10));
    // Summation order differs between the two layouts, so compare relative to
    // the gradient's own magnitude.
    const auto rel_gap = [](const auto& a, const auto& b) {
      const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
      return (a - b).cwiseAbs().maxCoeff() / scale;
    };
    for (int e = 0; e < ps.size(); ++e) {
      if (!gbig[e].allocated && !gsum[e].allocated) continue;
      REQUIRE(gbig[e].allocated == gsum[e].allocated);
      CHECK(rel_gap(gbig[e].w1, gsum[e].w1) < 1e-9);
      CHECK(rel_gap(gbig[e].b3, gsum[e].b3) < 1e-9);
    }
  }
}

TEST_CASE("finite differences confirm the analytic gradients") {
  Rng rng(5150);
  int usable = 0;
  double worst = 0.0;
  for (int i = 0; i < 8; ++i) {
    const LossProgram p = sample_program(20, rng);
    const auto res = testsup::fd_gradcheck(p, 1000 + static_cast<std::uint64_t>(i),
                                           /*state_dim=*/3, /*action_count=*/2,
                                           /*hidden=*/8, /*batch=*/4);
    if (!res.usable) continue;  // no smooth point found for this program
    ++usable;
    worst = std::max(worst, res.max_rel);
    CHECK(res.max_rel < 1e-3);
  }
  REQUIRE(usable >= 5);
  MESSAGE("fd worst rel err: ", worst, " over ", usable, " programs");
}

TEST_CASE("finite differences confirm the reference algorithm gradients") {
  for (const auto& p : {make_dqn(), make_ddqn(), make_dqn_clipped(), make_dqn_reg()}) {
    const auto res = testsup::fd_gradcheck(p, 99, 4, 2, 8, 4);
    REQUIRE(res.usable);
    CHECK(res.max_rel < 1e-3);
  }
}

TEST_CASE("adam applies the bias-corrected update") {
  const LossProgram p = make_dqn();
  auto ps = stub_store(p);
  const auto in = two_sample_bindings();
  AdamHyper hp;  // lr 1e-4, beta 0.9/0.999, eps 1e-8

  auto tape = eval_forward(p, in, ps, 0);
  const GradMap<double> grads = eval_backward(tape, ps);
  const double g = grads[ps.index_of("q")].b3(0);  // 0.13
  apply_grads(ps, grads, hp);

  // Fresh Adam state: mhat = g, vhat = g^2, so the step is lr * g/(|g|+eps).
  const double expect1 = 0.5 - hp.lr * g / (std::abs(g) + hp.eps);
  CHECK(ps.entry(ps.index_of("q")).mlp.b3(0) == doctest::Approx(expect1).epsilon(1e-12));

  // Second step with the same gradient keeps |update| == lr under bias
  // correction: m2hat = g, v2hat = g^2 again.
  apply_grads(ps, grads, hp);
  const double expect2 = expect1 - hp.lr * g / (std::abs(g) + hp.eps);
  CHECK(ps.entry(ps.index_of("q")).mlp.b3(0) == doctest::Approx(expect2).epsilon(1e-10));
}

TEST_CASE("apply_grads never touches frozen networks") {
  const LossProgram p = make_dqn();
  auto ps = stub_store(p);
  GradMap<double> grads = make_grad_map(ps);
  const int ti = ps.index_of("q_target");
  grads[ti].ensure_shape(ps.entry(ti).mlp);
  grads[ti].b3.setConstant(100.0);
  grads[ti].allocated = true;
  apply_grads(ps, grads, AdamHyper{});
  CHECK(ps.entry(ti).mlp.b3(0) == doctest::Approx(0.3));
}

TEST_CASE("sync_target copies the online network into the target") {
  const LossProgram p = make_dqn();
  auto ps = stub_store(p);
  ps.sync_target();
  CHECK(ps.entry(ps.index_of("q_target")).mlp.b3(0) == doctest::Approx(0.5));
  CHECK(ps.entry(ps.index_of("q_target")).mlp.b3(1) == doctest::Approx(0.2));
}

TEST_CASE("eval_forward rejects inconsistent bindings") {
  const LossProgram p = make_dqn();
  const auto ps = stub_store(p);
  Bindings<double> in = two_sample_bindings();
  in.a_t = {0};  // batch mismatch
  CHECK_THROWS_AS((void)eval_forward(p, in, ps, 0), ContractError);

  Bindings<double> empty;
  CHECK_THROWS_AS((void)eval_forward(p, empty, ps, 0), ContractError);
}

TEST_SUITE_END();
