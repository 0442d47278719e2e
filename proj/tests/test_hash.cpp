#include <doctest.h>

#include <set>

#include "evoloss/algorithms.hpp"
#include "evoloss/hashing.hpp"
#include "evoloss/sampler.hpp"

using namespace evoloss;

TEST_SUITE_BEGIN("hash");

TEST_CASE("digest is stable across calls") {
  const LossProgram p = make_dqn();
  const auto a = functional_hash(p);
  const auto b = functional_hash(p);
  CHECK(a == b);
  CHECK(a != kInvalidDigest);
}

TEST_CASE("dead code never changes the digest") {
  const auto dqn_digest = functional_hash(make_dqn());
  Rng rng(3030);
  for (int i = 0; i < 50; ++i) {
    // Bootstrap programs are 12 random dead nodes plus the DQN tail; every
    // one of them must land in DQN's functional class.
    const LossProgram boot = make_bootstrap_program(20, rng);
    CHECK(functional_hash(boot) == dqn_digest);
  }
}

TEST_CASE("adding zero is recognized as the identity") {
  // dqnreg with k = 0 computes 0*Q(s,a) + delta^2 == plain DQN.
  CHECK(functional_hash(make_dqn_reg(0.0)) == functional_hash(make_dqn()));
}

TEST_CASE("the reference algorithms occupy distinct classes") {
  std::set<std::uint64_t> digests{
      functional_hash(make_dqn()),
      functional_hash(make_ddqn()),
      functional_hash(make_dqn_clipped()),
      functional_hash(make_dqn_reg()),
      functional_hash(make_dqn_reg(0.5)),
  };
  CHECK(digests.size() == 5);
}

TEST_CASE("ddqn differs from dqn even though both use the target net") {
  // Distinguishing these requires probing with independent target weights;
  // with q_target == q the two losses coincide pointwise.
  CHECK(functional_hash(make_ddqn()) != functional_hash(make_dqn()));
}

TEST_CASE("type-inconsistent programs get the invalid digest") {
  LossProgram p = make_base_program();
  p.nodes.push_back(Node::make_op(Op::Add, {0, 1}));  // State + Action
  p.output = static_cast<int>(p.nodes.size()) - 1;
  CHECK(functional_hash(p) == kInvalidDigest);
}

TEST_CASE("list-valued programs still hash") {
  LossProgram p = make_base_program();
  p.nodes.push_back(Node::make_op(Op::NnS2List, {5, 0}));
  p.output = static_cast<int>(p.nodes.size()) - 1;
  CHECK(functional_hash(p) != kInvalidDigest);
}

TEST_CASE("random programs rarely collide and always rehash identically") {
  Rng rng(4040);
  std::set<std::uint64_t> seen;
  int valid = 0;
  for (int i = 0; i < 200; ++i) {
    const LossProgram p = sample_program(20, rng);
    const auto h = functional_hash(p);
    CHECK(functional_hash(p) == h);
    if (h != kInvalidDigest) {
      seen.insert(h);
      ++valid;
    }
  }
  // Duplicates happen (that is the point of the digest) but most sampled
  // programs should be behaviorally distinct.
  CHECK(valid == 200);
  CHECK(seen.size() > 100);
}

TEST_SUITE_END();
