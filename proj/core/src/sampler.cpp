#include "evoloss/sampler.hpp"

#include <stdexcept>

namespace evoloss {
namespace {

struct Assignment {
  std::vector<int> parents;
  double const_value = 0.0;
  DType out = DType::Float;
};

using Types = std::vector<std::optional<DType>>;

Types prefix_types(const LossProgram& p) {
  return derive_types(p).types;
}

// All type-valid parent assignments for `op` at a position where nodes
// [0, upto) exist. Deterministic enumeration order.
std::vector<Assignment> enumerate_assignments(const LossProgram& p, const Types& types,
                                              int upto, Op op) {
  std::vector<Assignment> out;
  auto data_nodes = [&](auto&& pred) {
    std::vector<int> v;
    for (int i = 0; i < upto; ++i) {
      if (p.nodes[i].kind != NodeKind::Param && types[i] && pred(*types[i])) v.push_back(i);
    }
    return v;
  };
  auto push = [&](std::vector<int> parents, DType t, double c = 0.0) {
    out.push_back({std::move(parents), c, t});
  };

  const OpInfo& oi = op_info(op);
  if (oi.is_nn) {
    const NetSig want = op == Op::NnS2List   ? NetSig::S2List
                        : op == Op::NnS2R    ? NetSig::S2R
                        : op == Op::NnS2V    ? NetSig::S2V
                                             : NetSig::V2V;
    const DType in = (op == Op::NnV2V) ? DType::Vector : DType::State;
    std::vector<int> nets;
    for (int i = 0; i < upto; ++i) {
      if (p.nodes[i].kind == NodeKind::Param && p.nodes[i].sig == want) nets.push_back(i);
    }
    const DType t = *op_output_type(op, std::array<DType, 1>{in});
    for (int net : nets) {
      for (int d : data_nodes([&](DType x) { return x == in; })) push({net, d}, t);
    }
    return out;
  }

  switch (op) {
    case Op::Const:
      for (double v : kConstMenu) push({}, DType::Float, v);
      break;
    case Op::Normal:
    case Op::Uniform:
      push({}, DType::Float);
      break;
    case Op::Add:
    case Op::Sub:
    case Op::Max:
    case Op::Min:
    case Op::Div:
    case Op::Dot:
    case Op::L2Dist: {
      const auto xs = data_nodes([](DType t) {
        return t == DType::Float || t == DType::State || t == DType::Vector;
      });
      for (int a : xs) {
        for (int b : xs) {
          const std::array<DType, 2> in{*types[a], *types[b]};
          if (auto t = op_output_type(op, in)) push({a, b}, *t);
        }
      }
      break;
    }
    case Op::SelectList: {
      const auto lists = data_nodes([](DType t) { return is_list_like(t); });
      const auto idx = data_nodes([](DType t) { return t == DType::Action; });
      for (int l : lists) {
        for (int i : idx) push({l, i}, DType::Float);
      }
      break;
    }
    case Op::KlDiv: {
      const auto probs = data_nodes([](DType t) { return t == DType::Probability; });
      for (int a : probs) {
        for (int b : probs) push({a, b}, DType::Float);
      }
      break;
    }
    default: {  // remaining unary ops
      for (int a : data_nodes([](DType) { return true; })) {
        const std::array<DType, 1> in{*types[a]};
        if (auto t = op_output_type(op, in)) push({a}, *t);
      }
      break;
    }
  }
  return out;
}

struct Draw {
  Op op;
  Assignment assign;
};

// One uniform (op, assignment) draw among type-admissible options. With
// `require_float`, redraw up to 50 times, then restrict to Float-producing
// assignments (Const always qualifies, so the fallback cannot be empty).
Draw sample_node(const LossProgram& p, const Types& types, int upto, Rng& rng,
                 bool require_float) {
  std::vector<Op> ops;
  std::vector<std::vector<Assignment>> options;
  for (int i = 0; i < kOpCount; ++i) {
    const Op op = static_cast<Op>(i);
    auto a = enumerate_assignments(p, types, upto, op);
    if (!a.empty()) {
      ops.push_back(op);
      options.push_back(std::move(a));
    }
  }

  for (int attempt = 0; attempt <= 50; ++attempt) {
    const int k = rng.index(ops.size());
    const Assignment& a = options[k][rng.index(options[k].size())];
    if (!require_float || a.out == DType::Float) return {ops[k], a};
  }

  std::vector<Op> fops;
  std::vector<std::vector<Assignment>> foptions;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    std::vector<Assignment> fl;
    for (const Assignment& a : options[k]) {
      if (a.out == DType::Float) fl.push_back(a);
    }
    if (!fl.empty()) {
      fops.push_back(ops[k]);
      foptions.push_back(std::move(fl));
    }
  }
  const int k = rng.index(fops.size());
  return {fops[k], foptions[k][rng.index(foptions[k].size())]};
}

void apply_draw(Node& node, const Draw& d) {
  node.kind = NodeKind::OpNode;
  node.op = d.op;
  node.parents = d.assign.parents;
  node.const_value = d.assign.const_value;
}

}  // namespace

void append_random_nodes(LossProgram& p, int count, Rng& rng) {
  Types types = prefix_types(p);
  for (int c = 0; c < count; ++c) {
    const int pos = static_cast<int>(p.nodes.size());
    const Draw d = sample_node(p, types, pos, rng, false);
    Node node;
    apply_draw(node, d);
    p.nodes.push_back(std::move(node));
    types.push_back(d.assign.out);
  }
}

LossProgram sample_program(int op_budget, Rng& rng) {
  if (op_budget < 1) throw std::invalid_argument("op_budget must be >= 1");
  LossProgram p = make_base_program();
  append_random_nodes(p, op_budget - 1, rng);

  Types types = prefix_types(p);
  const int pos = static_cast<int>(p.nodes.size());
  const Draw d = sample_node(p, types, pos, rng, true);
  Node node;
  apply_draw(node, d);
  p.nodes.push_back(std::move(node));
  p.output = pos;
  return p;
}

LossProgram mutate_program(const LossProgram& parent, Rng& rng) {
  std::vector<int> op_positions;
  for (int i = 0; i < static_cast<int>(parent.nodes.size()); ++i) {
    if (parent.nodes[i].kind == NodeKind::OpNode) op_positions.push_back(i);
  }
  if (op_positions.empty()) throw ContractError("mutate_program: no op nodes");

  LossProgram child = parent;
  const int pos = op_positions[rng.index(op_positions.size())];
  const Types types = prefix_types(child);
  const Draw d = sample_node(child, types, pos, rng, pos == child.output);
  apply_draw(child.nodes[pos], d);
  return child;
}

}  // namespace evoloss
