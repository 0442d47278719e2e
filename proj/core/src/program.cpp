#include "evoloss/program.hpp"

#include <bit>
#include <cstring>

#include "evoloss/rng.hpp"

namespace evoloss {

const char* net_sig_name(NetSig sig) {
  switch (sig) {
    case NetSig::S2List: return "s2list";
    case NetSig::S2R: return "s2r";
    case NetSig::S2V: return "s2v";
    case NetSig::V2V: return "v2v";
  }
  return "?";
}

std::optional<NetSig> net_sig_from_name(std::string_view name) {
  for (NetSig s : {NetSig::S2List, NetSig::S2R, NetSig::S2V, NetSig::V2V}) {
    if (name == net_sig_name(s)) return s;
  }
  return std::nullopt;
}

Node Node::input(int slot) {
  Node n;
  n.kind = NodeKind::Input;
  n.input_slot = slot;
  n.id = kInputSlots[slot].name;
  return n;
}

Node Node::param(std::string net_id, NetSig sig, bool trainable) {
  Node n;
  n.kind = NodeKind::Param;
  n.id = net_id;
  n.net_id = std::move(net_id);
  n.sig = sig;
  n.trainable = trainable;
  return n;
}

Node Node::make_op(Op op, std::vector<int> parents, double const_value) {
  Node n;
  n.kind = NodeKind::OpNode;
  n.op = op;
  n.parents = std::move(parents);
  n.const_value = const_value;
  return n;
}

int LossProgram::op_count() const {
  int c = 0;
  for (const Node& n : nodes) c += (n.kind == NodeKind::OpNode) ? 1 : 0;
  return c;
}

int LossProgram::find_node(std::string_view id) const {
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    if (nodes[i].id == id) return i;
  }
  return -1;
}

int LossProgram::find_param(std::string_view net_id) const {
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    if (nodes[i].kind == NodeKind::Param && nodes[i].net_id == net_id) return i;
  }
  return -1;
}

int LossProgram::preamble_size() const {
  int i = 0;
  while (i < static_cast<int>(nodes.size()) && nodes[i].kind != NodeKind::OpNode) ++i;
  return i;
}

LossProgram make_base_program() {
  LossProgram p;
  for (int slot = 0; slot < kInputCount; ++slot) p.nodes.push_back(Node::input(slot));
  p.nodes.push_back(Node::param("q", NetSig::S2List, true));
  p.nodes.push_back(Node::param("q_target", NetSig::S2List, false));
  p.nodes.push_back(Node::param("aux1", NetSig::S2R, true));
  p.nodes.push_back(Node::param("aux2", NetSig::S2V, true));
  p.nodes.push_back(Node::param("aux3", NetSig::V2V, true));
  return p;
}

const char* fail_kind_name(FailKind k) {
  switch (k) {
    case FailKind::OutputNotScalar: return "OutputNotScalar";
    case FailKind::NotDifferentiable: return "NotDifferentiable";
    case FailKind::TypeMismatch: return "TypeMismatch";
    case FailKind::Cycle: return "Cycle";
    case FailKind::ArityError: return "ArityError";
  }
  return "?";
}

bool ValidationReport::has(FailKind k) const {
  for (const Failure& f : failures) {
    if (f.kind == k) return true;
  }
  return false;
}

std::string ValidationReport::describe() const {
  if (is_valid) return "valid";
  std::string out;
  for (const Failure& f : failures) {
    if (!out.empty()) out += "; ";
    out += fail_kind_name(f.kind);
    if (f.node >= 0) out += " at node " + std::to_string(f.node);
  }
  return out;
}

namespace {

NetSig required_sig(Op op) {
  switch (op) {
    case Op::NnS2List: return NetSig::S2List;
    case Op::NnS2R: return NetSig::S2R;
    case Op::NnS2V: return NetSig::S2V;
    default: return NetSig::V2V;
  }
}

}  // namespace

TypeInfo derive_types(const LossProgram& p) {
  TypeInfo info;
  const int n = static_cast<int>(p.nodes.size());
  info.types.assign(n, std::nullopt);
  bool ok = true;

  for (int i = 0; i < n; ++i) {
    const Node& node = p.nodes[i];
    switch (node.kind) {
      case NodeKind::Input:
        if (node.input_slot < 0 || node.input_slot >= kInputCount) {
          info.failures.push_back({FailKind::TypeMismatch, i});
          ok = false;
        } else {
          info.types[i] = kInputSlots[node.input_slot].type;
        }
        break;
      case NodeKind::Param:
        break;  // not a data value
      case NodeKind::OpNode: {
        const OpInfo& oi = op_info(node.op);
        if (static_cast<int>(node.parents.size()) != oi.arity) {
          info.failures.push_back({FailKind::ArityError, i});
          ok = false;
          break;
        }
        bool bad = false;
        for (int par : node.parents) {
          if (par < 0 || par >= i) {  // node order is the topological order
            info.failures.push_back({FailKind::Cycle, i});
            bad = true;
            break;
          }
        }
        if (bad) {
          ok = false;
          break;
        }
        std::vector<DType> data_types;
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
          const Node& parent = p.nodes[node.parents[k]];
          if (oi.is_nn && k == 0) {
            if (parent.kind != NodeKind::Param || parent.sig != required_sig(node.op)) bad = true;
            continue;
          }
          if (parent.kind == NodeKind::Param || !info.types[node.parents[k]]) {
            bad = true;
            continue;
          }
          data_types.push_back(*info.types[node.parents[k]]);
        }
        std::optional<DType> out;
        if (!bad) out = op_output_type(node.op, data_types);
        if (!out) {
          info.failures.push_back({FailKind::TypeMismatch, i});
          ok = false;
        } else {
          info.types[i] = out;
        }
        break;
      }
    }
  }

  if (p.output < 0 || p.output >= n || !info.types[p.output]) {
    ok = false;
  } else {
    info.output_type = info.types[p.output];
  }
  info.evaluable = ok;
  return info;
}

ValidationReport validate_program(const LossProgram& p) {
  ValidationReport report;
  TypeInfo info = derive_types(p);
  report.failures = info.failures;

  if (!info.output_type) {
    report.failures.push_back({FailKind::OutputNotScalar, p.output});
  } else if (*info.output_type != DType::Float) {
    report.failures.push_back({FailKind::OutputNotScalar, p.output});
  }

  // Gradient reaches the output if some trainable net apply connects to it
  // through gradient-passing edges.
  if (info.output_type && *info.output_type == DType::Float) {
    const int n = static_cast<int>(p.nodes.size());
    std::vector<char> grad(n, 0);
    for (int i = 0; i < n; ++i) {
      const Node& node = p.nodes[i];
      if (node.kind != NodeKind::OpNode || !info.types[i]) continue;
      const OpInfo& oi = op_info(node.op);
      bool g = false;
      if (oi.is_nn && p.nodes[node.parents[0]].trainable) g = true;
      int data_index = 0;
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        if (oi.is_nn && k == 0) continue;
        if (grad[node.parents[k]] && op_passes_gradient(node.op, data_index)) g = true;
        ++data_index;
      }
      grad[i] = g ? 1 : 0;
    }
    if (!grad[p.output]) report.failures.push_back({FailKind::NotDifferentiable, p.output});
  }

  report.is_valid = report.failures.empty();
  return report;
}

std::vector<char> reachable_from_output(const LossProgram& p) {
  std::vector<char> seen(p.nodes.size(), 0);
  if (p.output < 0 || p.output >= static_cast<int>(p.nodes.size())) return seen;
  std::vector<int> stack{p.output};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    if (i < 0 || i >= static_cast<int>(p.nodes.size()) || seen[i]) continue;
    seen[i] = 1;
    for (int par : p.nodes[i].parents) {
      if (par >= 0 && par < i) stack.push_back(par);
    }
  }
  return seen;
}

bool structurally_equal(const LossProgram& a, const LossProgram& b) {
  if (a.nodes.size() != b.nodes.size() || a.output != b.output) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const Node& x = a.nodes[i];
    const Node& y = b.nodes[i];
    if (x.kind != y.kind) return false;
    switch (x.kind) {
      case NodeKind::Input:
        if (x.input_slot != y.input_slot) return false;
        break;
      case NodeKind::Param:
        if (x.net_id != y.net_id || x.sig != y.sig || x.trainable != y.trainable) return false;
        break;
      case NodeKind::OpNode:
        if (x.op != y.op || x.parents != y.parents) return false;
        if (op_info(x.op).has_const && x.const_value != y.const_value) return false;
        break;
    }
  }
  return true;
}

std::uint64_t structural_fingerprint(const LossProgram& p) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  feed(p.nodes.size());
  feed(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.output)));
  for (const Node& n : p.nodes) {
    feed(static_cast<std::uint64_t>(n.kind));
    switch (n.kind) {
      case NodeKind::Input:
        feed(static_cast<std::uint64_t>(n.input_slot));
        break;
      case NodeKind::Param:
        h = fnv1a64(n.net_id, h);
        feed(static_cast<std::uint64_t>(n.sig));
        feed(n.trainable ? 1 : 0);
        break;
      case NodeKind::OpNode:
        feed(static_cast<std::uint64_t>(n.op));
        for (int par : n.parents) feed(static_cast<std::uint64_t>(par));
        if (op_info(n.op).has_const) feed(std::bit_cast<std::uint64_t>(n.const_value));
        break;
    }
  }
  return h;
}

}  // namespace evoloss
