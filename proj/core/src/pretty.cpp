#include "evoloss/pretty.hpp"

#include <cstdio>

namespace evoloss {
namespace {

// Precedence levels: 1 add/sub, 2 mul/div, 3 atoms. "max_a f(x,a)" and
// "(x)^2" are self-delimiting and count as atoms.
constexpr int kAddLevel = 1;
constexpr int kMulLevel = 2;
constexpr int kAtomLevel = 3;

const char* kInputDisplay[5] = {"s_t", "a_t", "r_t", "s_{t+1}", "γ"};

std::string net_display(const Node& param) {
  if (param.net_id == "q") return "Q";
  if (param.net_id == "q_target") return "Q_targ";
  return param.net_id;
}

struct Printer {
  const LossProgram& p;
  TypeInfo info = derive_types(p);

  std::string render(int i, int needed) const {
    const Node& n = p.nodes[i];
    switch (n.kind) {
      case NodeKind::Input: return kInputDisplay[n.input_slot];
      case NodeKind::Param: return net_display(n);
      case NodeKind::OpNode: break;
    }

    auto wrap = [&](const std::string& s, int level) {
      return level < needed ? "(" + s + ")" : s;
    };
    auto arg = [&](int k) { return render(n.parents[k], 0); };
    const auto& parents = n.parents;

    switch (n.op) {
      case Op::Add:
        return wrap(render(parents[0], kAddLevel) + " + " + render(parents[1], kAddLevel + 1),
                    kAddLevel);
      case Op::Sub:
        return wrap(render(parents[0], kAddLevel) + " - " + render(parents[1], kAddLevel + 1),
                    kAddLevel);
      case Op::Div:
        return wrap(render(parents[0], kMulLevel) + " / " + render(parents[1], kMulLevel + 1),
                    kMulLevel);
      case Op::Dot: {
        if (parents[0] == parents[1]) return "(" + render(parents[0], 0) + ")^2";
        const bool scalars = is_scalar(parents[0]) && is_scalar(parents[1]);
        if (scalars) {
          return wrap(render(parents[0], kMulLevel) + "*" + render(parents[1], kMulLevel),
                      kMulLevel);
        }
        return "dot(" + arg(0) + "," + arg(1) + ")";
      }
      case Op::MulTenth:
        return wrap("0.1*" + render(parents[0], kMulLevel), kMulLevel);
      case Op::Max: return "max(" + arg(0) + "," + arg(1) + ")";
      case Op::Min: return "min(" + arg(0) + "," + arg(1) + ")";
      case Op::L2Dist: return "l2dist(" + arg(0) + "," + arg(1) + ")";
      case Op::MaxList:
      case Op::MinList: {
        const char* kw = (n.op == Op::MaxList) ? "max_a " : "min_a ";
        if (auto call = nn_call(parents[0], "a")) return kw + *call;
        return std::string(n.op == Op::MaxList ? "max_list(" : "min_list(") + arg(0) + ")";
      }
      case Op::SelectList: {
        if (auto call = nn_call(parents[0], render(parents[1], 0))) return *call;
        return "select_list(" + arg(0) + "," + arg(1) + ")";
      }
      case Op::ArgMaxList:
        if (auto call = nn_call(parents[0], "a")) return "argmax_a " + *call;
        return "argmax_list(" + arg(0) + ")";
      case Op::MeanList: return "mean_list(" + arg(0) + ")";
      case Op::VarList: return "var_list(" + arg(0) + ")";
      case Op::Log: return "log(" + arg(0) + ")";
      case Op::Exp: return "exp(" + arg(0) + ")";
      case Op::Abs: return "|" + arg(0) + "|";
      case Op::Softmax: return "softmax(" + arg(0) + ")";
      case Op::KlDiv: return "kl(" + arg(0) + "," + arg(1) + ")";
      case Op::Entropy: return "entropy(" + arg(0) + ")";
      case Op::Const: {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", n.const_value);
        return buf;
      }
      case Op::Normal: return "N(0,1)";
      case Op::Uniform: return "U(0,1)";
      case Op::NnS2List:
      case Op::NnS2R:
      case Op::NnS2V:
      case Op::NnV2V:
        return net_display(p.nodes[parents[0]]) + "(" + arg(1) + ")";
    }
    return "?";
  }

  // "NET(x,extra)" when node i is a list-producing network apply; the
  // selected or maxed-over action slots in as the second argument.
  std::optional<std::string> nn_call(int i, const std::string& extra) const {
    const Node& n = p.nodes[i];
    if (n.kind != NodeKind::OpNode || n.op != Op::NnS2List) return std::nullopt;
    return net_display(p.nodes[n.parents[0]]) + "(" + render(n.parents[1], 0) + "," + extra + ")";
  }

  bool is_scalar(int i) const {
    return info.types[i] && *info.types[i] == DType::Float;
  }
};

}  // namespace

std::string pretty_print(const LossProgram& p) {
  if (p.output < 0 || p.output >= static_cast<int>(p.nodes.size())) return "<no output>";
  return Printer{p}.render(p.output, 0);
}

}  // namespace evoloss
