#include "evoloss/algorithms.hpp"

#include <cstdlib>

#include "evoloss/errors.hpp"
#include "evoloss/sampler.hpp"

namespace evoloss {
namespace {

// Preamble indices of make_base_program.
constexpr int kSt = 0, kAt = 1, kRt = 2, kStp1 = 3, kGamma = 4, kQ = 5, kQt = 6;

int push(LossProgram& p, const char* id, Op op, std::vector<int> parents, double c = 0.0) {
  Node n = Node::make_op(op, std::move(parents), c);
  n.id = id;
  p.nodes.push_back(std::move(n));
  return static_cast<int>(p.nodes.size()) - 1;
}

// Appends the eight DQN nodes; returns the output (squared TD error) index.
int append_dqn_tail(LossProgram& p) {
  const int qs = push(p, "qs", Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, "qsa", Op::SelectList, {qs, kAt});
  const int qts = push(p, "qts", Op::NnS2List, {kQt, kStp1});
  const int maxqt = push(p, "maxqt", Op::MaxList, {qts});
  const int disc = push(p, "disc", Op::Dot, {kGamma, maxqt});
  const int target = push(p, "target", Op::Add, {kRt, disc});
  const int delta = push(p, "delta", Op::Sub, {qsa, target});
  return push(p, "loss", Op::Dot, {delta, delta});
}

}  // namespace

LossProgram make_dqn() {
  LossProgram p = make_base_program();
  p.output = append_dqn_tail(p);
  return p;
}

LossProgram make_ddqn() {
  LossProgram p = make_base_program();
  const int qs = push(p, "qs", Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, "qsa", Op::SelectList, {qs, kAt});
  const int q_next = push(p, "qnext", Op::NnS2List, {kQ, kStp1});
  const int argmax = push(p, "amax", Op::ArgMaxList, {q_next});
  const int qts = push(p, "qts", Op::NnS2List, {kQt, kStp1});
  const int qt_sel = push(p, "qtsel", Op::SelectList, {qts, argmax});
  const int disc = push(p, "disc", Op::Dot, {kGamma, qt_sel});
  const int target = push(p, "target", Op::Add, {kRt, disc});
  const int delta = push(p, "delta", Op::Sub, {qsa, target});
  p.output = push(p, "loss", Op::Dot, {delta, delta});
  return p;
}

LossProgram make_dqn_clipped() {
  LossProgram p = make_base_program();
  const int qs = push(p, "qs", Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, "qsa", Op::SelectList, {qs, kAt});
  const int qts = push(p, "qts", Op::NnS2List, {kQt, kStp1});
  const int maxqt = push(p, "maxqt", Op::MaxList, {qts});
  const int disc = push(p, "disc", Op::Dot, {kGamma, maxqt});
  const int target = push(p, "target", Op::Add, {kRt, disc});
  const int delta = push(p, "delta", Op::Sub, {qsa, target});
  const int delta_sq = push(p, "dsq", Op::Dot, {delta, delta});
  const int dsq_plus_y = push(p, "dsqy", Op::Add, {delta_sq, target});
  const int case1 = push(p, "case1", Op::Max, {qsa, dsq_plus_y});
  const int maxqt_sq = push(p, "mqt2", Op::Dot, {maxqt, maxqt});
  const int disc_sq = push(p, "disc2", Op::Dot, {kGamma, maxqt_sq});
  const int case2 = push(p, "case2", Op::Max, {delta, disc_sq});
  p.output = push(p, "loss", Op::Add, {case1, case2});
  return p;
}

LossProgram make_dqn_reg(double k) {
  LossProgram p = make_base_program();
  const int qs = push(p, "qs", Op::NnS2List, {kQ, kSt});
  const int qsa = push(p, "qsa", Op::SelectList, {qs, kAt});
  const int qts = push(p, "qts", Op::NnS2List, {kQt, kStp1});
  const int maxqt = push(p, "maxqt", Op::MaxList, {qts});
  const int disc = push(p, "disc", Op::Dot, {kGamma, maxqt});
  const int target = push(p, "target", Op::Add, {kRt, disc});
  const int delta = push(p, "delta", Op::Sub, {qsa, target});
  int reg;
  if (k == 0.1) {
    reg = push(p, "reg", Op::MulTenth, {qsa});
  } else {
    const int ck = push(p, "ck", Op::Const, {}, k);
    reg = push(p, "reg", Op::Dot, {ck, qsa});
  }
  const int delta_sq = push(p, "dsq", Op::Dot, {delta, delta});
  p.output = push(p, "loss", Op::Add, {reg, delta_sq});
  return p;
}

LossProgram make_bootstrap_program(int op_budget, Rng& rng) {
  if (op_budget < 8) throw ConfigError("bootstrap needs an op budget of at least 8");
  LossProgram p = make_base_program();
  append_random_nodes(p, op_budget - 8, rng);
  p.output = append_dqn_tail(p);
  return p;
}

LossProgram algorithm_by_name(const std::string& name) {
  if (name == "dqn") return make_dqn();
  if (name == "ddqn") return make_ddqn();
  if (name == "dqnclipped" || name == "dqn_clipped") return make_dqn_clipped();
  if (name == "dqnreg") return make_dqn_reg();
  if (name.rfind("dqnreg:k=", 0) == 0) {
    const std::string num = name.substr(9);
    char* end = nullptr;
    const double k = std::strtod(num.c_str(), &end);
    if (end == num.c_str() || *end != '\0') {
      throw ConfigError("bad dqnreg coefficient: " + num);
    }
    return make_dqn_reg(k);
  }
  throw ConfigError("unknown algorithm '" + name + "' (try: dqn, ddqn, dqnclipped, dqnreg, dqnreg:k=<v>)");
}

std::vector<std::string> algorithm_names() {
  return {"dqn", "ddqn", "dqnclipped", "dqnreg", "dqnreg:k=<v>"};
}

}  // namespace evoloss
