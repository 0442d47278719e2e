#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "evoloss/algorithms.hpp"
#include "evoloss/env.hpp"
#include "evoloss/errors.hpp"
#include "evoloss/mlp.hpp"
#include "evoloss/program.hpp"
#include "evoloss/rng.hpp"
#include "evoloss/train.hpp"

using namespace evoloss;

namespace {

TrainConfig tiny_config(int episodes, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.episodes = episodes;
  cfg.hidden = 8;
  cfg.seed = seed;
  return cfg;
}

// Valid program with constant loss 1.0 and zero gradient: Q(s,a) / Q(s,a).
LossProgram constant_loss_program() {
  LossProgram p = make_base_program();
  const int q = p.find_param("q");
  const int st = p.find_node("s_t");
  const int at = p.find_node("a_t");
  p.nodes.push_back(Node::make_op(Op::NnS2List, {q, st}));
  const int qs = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::SelectList, {qs, at}));
  const int qsa = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::Div, {qsa, qsa}));
  p.output = static_cast<int>(p.nodes.size()) - 1;
  return p;
}

// Always-infinite loss through a differentiable path: exp(1 / |Q - Q|).
LossProgram exploding_loss_program() {
  LossProgram p = make_base_program();
  const int q = p.find_param("q");
  const int st = p.find_node("s_t");
  const int at = p.find_node("a_t");
  p.nodes.push_back(Node::make_op(Op::NnS2List, {q, st}));
  const int qs = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::SelectList, {qs, at}));
  const int qsa = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::Sub, {qsa, qsa}));
  const int zero = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::Abs, {zero}));
  const int az = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::Const, {}, 1.0));
  const int one = static_cast<int>(p.nodes.size()) - 1;
  p.nodes.push_back(Node::make_op(Op::Div, {one, az}));
  const int big = static_cast<int>(p.nodes.size()) - 1;  // 1e8 via the guard
  p.nodes.push_back(Node::make_op(Op::Exp, {big}));      // exp(1e8) = inf
  p.output = static_cast<int>(p.nodes.size()) - 1;
  return p;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("epsilon_greedy argmax, ties, and exploration") {
  Rng rng(3);
  CHECK(epsilon_greedy({1.0f, 3.0f, 2.0f}, 0.0, rng) == 1);
  CHECK(epsilon_greedy({2.0f, 2.0f}, 0.0, rng) == 0);  // tie -> lowest index
  const float inf = std::numeric_limits<float>::infinity();
  const float nan = std::numeric_limits<float>::quiet_NaN();
  CHECK(epsilon_greedy({nan, 1.0f, 0.5f}, 0.0, rng) == 1);
  CHECK(epsilon_greedy({0.0f, inf, 1.0f}, 0.0, rng) == 2);  // inf is non-finite
  CHECK(epsilon_greedy({nan, nan}, 0.0, rng) == 0);
  CHECK_THROWS_AS(epsilon_greedy({}, 0.0, rng), ContractError);

  int counts[3] = {0, 0, 0};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[epsilon_greedy({9.0f, 0.0f, 0.0f}, 1.0, rng)] += 1;
  const double expect = draws / 3.0;
  const double sigma = std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
  for (int c : counts) CHECK(std::abs(c - expect) < 3.0 * sigma);
}

TEST_CASE("normalized_return clips per episode") {
  const EnvSpec& mc = make_env("mountaincar")->spec();  // range [-200, -110]
  CHECK(normalized_return(-200.0, mc) == 0.0);
  CHECK(normalized_return(-110.0, mc) == 1.0);
  CHECK(normalized_return(-155.0, mc) == doctest::Approx(0.5));
  CHECK(normalized_return(-90.0, mc) == 1.0);   // above r_max clips to 1
  CHECK(normalized_return(-300.0, mc) == 0.0);  // below r_min clips to 0
  // M=2 with returns {r_min, r_max} averages to one half.
  CHECK((normalized_return(mc.r_min, mc) + normalized_return(mc.r_max, mc)) / 2.0 == 0.5);
}

TEST_CASE("replay buffer ring semantics and masking") {
  ReplayBuffer buf(10);
  CHECK(buf.capacity() == 10);
  for (int i = 0; i < 25; ++i) {
    Transition t;
    t.s = Eigen::VectorXf::Constant(2, static_cast<float>(i));
    t.s_next = t.s;
    t.a = i % 3;
    t.r = static_cast<float>(i);
    t.terminal = i % 4 == 0;
    buf.push(std::move(t));
    CHECK(buf.size() == std::min(i + 1, 10));
  }
  // Oldest entries were evicted: contents are exactly rewards 15..24.
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < buf.size(); ++i) {
    lo = std::min(lo, static_cast<double>(buf.at(i).r));
    hi = std::max(hi, static_cast<double>(buf.at(i).r));
  }
  CHECK(lo == 15.0);
  CHECK(hi == 24.0);

  Rng rng(5);
  const Bindings<float> masked = buf.sample(64, rng, 0.9f, true);
  for (int i = 0; i < 64; ++i) {
    const bool terminal = static_cast<int>(masked.r_t(i)) % 4 == 0;
    CHECK(masked.gamma(i) == (terminal ? 0.0f : 0.9f));
  }
  const Bindings<float> unmasked = buf.sample(64, rng, 0.9f, false);
  for (int i = 0; i < 64; ++i) CHECK(unmasked.gamma(i) == 0.9f);
}

TEST_CASE("replay sampling is uniform over contents") {
  ReplayBuffer buf(20);
  for (int i = 0; i < 20; ++i) {
    Transition t;
    t.s = Eigen::VectorXf::Constant(1, 0.0f);
    t.s_next = t.s;
    t.r = static_cast<float>(i);
    buf.push(std::move(t));
  }
  Rng rng(11);
  std::vector<int> hits(20, 0);
  const int rounds = 500;
  for (int r = 0; r < rounds; ++r) {
    const Bindings<float> b = buf.sample(20, rng, 0.9f, false);
    for (int i = 0; i < 20; ++i) hits[static_cast<int>(b.r_t(i))] += 1;
  }
  const double expect = rounds;  // 500 * 20 draws over 20 slots
  const double sigma = std::sqrt(rounds * 20 * (1.0 / 20.0) * (19.0 / 20.0));
  for (int h : hits) {
    CHECK(h > 0);
    CHECK(std::abs(h - expect) < 5.0 * sigma);
  }
  ReplayBuffer empty(4);
  CHECK_THROWS_AS(empty.sample(1, rng, 0.9f, false), ContractError);
}

TEST_CASE("eval_algorithm is reproducible and consistent") {
  const LossProgram dqn = make_dqn();
  const TrainConfig cfg = tiny_config(4, 123);
  const EvalResult a = eval_algorithm(dqn, "cartpole", cfg);
  const EvalResult b = eval_algorithm(dqn, "cartpole", cfg);
  REQUIRE(a.episode_returns.size() == 4);
  CHECK(a.episode_returns == b.episode_returns);
  CHECK(a.env_steps == b.env_steps);
  CHECK(a.grad_steps == b.grad_steps);
  CHECK(a.normalized_score == b.normalized_score);

  // Score is the mean of clipped per-episode normalized returns.
  const EnvSpec& sp = make_env("cartpole")->spec();
  double norm = 0.0;
  for (double r : a.episode_returns) norm += normalized_return(r, sp);
  norm /= static_cast<double>(a.episode_returns.size());
  CHECK(a.normalized_score == doctest::Approx(norm).epsilon(1e-12));

  // Updates run once per env step after the warmup fill.
  CHECK(a.grad_steps == a.env_steps - cfg.batch_size + 1);

  // Different seeds explore differently.
  TrainConfig other = cfg;
  other.seed = 124;
  const EvalResult c = eval_algorithm(dqn, "cartpole", other);
  CHECK(a.episode_returns != c.episode_returns);

  // Final weights come back with the frozen target in place.
  CHECK(a.params.index_of("q") >= 0);
  CHECK(a.params.index_of("q_target") >= 0);
  CHECK(a.params.entry(a.params.index_of("q")).trainable);
  CHECK_FALSE(a.params.entry(a.params.index_of("q_target")).trainable);
}

TEST_CASE("invalid program is rejected up front") {
  LossProgram p = make_base_program();
  p.nodes.push_back(Node::make_op(Op::Const, {}, 1.0));
  p.output = static_cast<int>(p.nodes.size()) - 1;  // no Q path
  CHECK_THROWS_AS(eval_algorithm(p, "cartpole", tiny_config(1, 0)), ConfigError);
}

TEST_CASE("constant loss leaves the policy near random") {
  const LossProgram flat = constant_loss_program();
  REQUIRE(validate_program(flat).is_valid);
  TrainConfig cfg = tiny_config(20, 7);
  const EvalResult r = eval_algorithm(flat, "cartpole", cfg);
  // Random cart-pole returns run about 20-25 steps per episode.
  CHECK(r.normalized_score < 0.3);
  CHECK(r.normalized_score > 0.0);
  CHECK(r.average_return < 60.0);
  CHECK_FALSE(r.diverged);
}

TEST_CASE("persistent non-finite losses abort with score zero") {
  const LossProgram boom = exploding_loss_program();
  REQUIRE(validate_program(boom).is_valid);
  TrainConfig cfg = tiny_config(50, 1);
  REQUIRE(cfg.divergence_patience == 100);  // contract default
  cfg.divergence_patience = 5;
  const EvalResult r = eval_algorithm(boom, "cartpole", cfg);
  CHECK(r.diverged);
  CHECK(r.normalized_score == 0.0);
  // Aborted early: nowhere near 50 episodes of experience.
  CHECK(r.env_steps < 200);
}

TEST_CASE("q_target changes only at sync points") {
  TrainConfig cfg = tiny_config(3, 9);
  cfg.target_sync = 10;
  const Mlp<float>::Mat probe = Mlp<float>::Mat::Zero(1, 4);
  std::vector<double> trace;
  std::vector<long> steps;
  cfg.on_update = [&](const Bindings<float>&, const ParameterStore<float>& ps, long gs) {
    const int ti = ps.index_of("q_target");
    REQUIRE(ti >= 0);
    const auto y = mlp_forward(ps.entry(ti).mlp, probe);
    trace.push_back(y(0, 0));
    steps.push_back(gs);
  };
  eval_algorithm(make_dqn(), "cartpole", cfg);
  REQUIRE(trace.size() > 25);
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (steps[i] % cfg.target_sync != 0) {
      CHECK(trace[i] == trace[i - 1]);  // frozen between syncs
    }
  }
  // At least one sync actually moved the target output.
  bool moved = false;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (steps[i] % cfg.target_sync == 0 && trace[i] != trace[i - 1]) moved = true;
  }
  CHECK(moved);
}

TEST_CASE("probe trace lands on the requested cadence") {
  TrainConfig cfg = tiny_config(3, 4);
  cfg.probe_interval = 10;
  const EvalResult r = eval_algorithm(make_dqn(), "cartpole", cfg);
  REQUIRE(!r.probe_steps.empty());
  for (std::size_t i = 0; i < r.probe_steps.size(); ++i) {
    CHECK(r.probe_steps[i] == static_cast<long>(10 * (i + 1)));
    CHECK(r.q_probe[i].size() == 2);
    for (double q : r.q_probe[i]) CHECK(std::isfinite(q));
  }
}

TEST_CASE("step budget mode stops at the first episode boundary past it") {
  TrainConfig cfg = tiny_config(0, 2);
  cfg.step_budget = 150;
  const EvalResult r = eval_algorithm(make_dqn(), "grid:empty:5", cfg);
  CHECK(r.env_steps >= 150);
  CHECK(r.env_steps <= 150 + 100);  // at most one extra episode (cap 100)
  CHECK(!r.episode_returns.empty());
  long total = 0;
  for (int len : r.episode_lengths) total += len;
  CHECK(total == r.env_steps);
}

TEST_CASE("score_on_suite sums env means over per-seed runs") {
  const LossProgram dqn = make_dqn();
  TrainConfig cfg = tiny_config(2, 31);
  const std::vector<std::string> suite{"cartpole", "grid:empty:5"};
  const SuiteScore s = score_on_suite(dqn, suite, 2, cfg);
  REQUIRE(s.envs.size() == 2);
  CHECK(s.envs[0].env == "cartpole");
  CHECK(s.envs[1].env == "grid:empty:5");
  double total = 0.0;
  for (const EnvScore& es : s.envs) {
    REQUIRE(es.seed_scores.size() == 2);
    double mean = (es.seed_scores[0] + es.seed_scores[1]) / 2.0;
    CHECK(es.mean == doctest::Approx(mean).epsilon(1e-12));
    total += es.mean;
  }
  CHECK(s.total == doctest::Approx(total).epsilon(1e-12));
  CHECK(s.total >= 0.0);
  CHECK(s.total <= 2.0);

  // Determinism across calls, and the empty suite sums to zero.
  const SuiteScore again = score_on_suite(dqn, suite, 2, cfg);
  CHECK(again.total == s.total);
  CHECK(score_on_suite(dqn, {}, 1, cfg).total == 0.0);
  CHECK_THROWS_AS(score_on_suite(dqn, suite, 0, cfg), ConfigError);
}

}  // TEST_SUITE
