#include "evoloss/ops.hpp"

namespace evoloss {
namespace {

constexpr OpInfo kOpTable[kOpCount] = {
    {"add", 2, false, false, false},        // Add
    {"sub", 2, false, false, false},        // Sub
    {"max", 2, false, false, false},        // Max
    {"min", 2, false, false, false},        // Min
    {"dot", 2, false, false, false},        // Dot
    {"div", 2, false, false, false},        // Div
    {"l2dist", 2, false, false, false},     // L2Dist
    {"max_list", 1, false, false, false},   // MaxList
    {"min_list", 1, false, false, false},   // MinList
    {"argmax_list", 1, false, false, false},// ArgMaxList
    {"select_list", 2, false, false, false},// SelectList
    {"mean_list", 1, false, false, false},  // MeanList
    {"var_list", 1, false, false, false},   // VarList
    {"log", 1, false, false, false},        // Log
    {"exp", 1, false, false, false},        // Exp
    {"abs", 1, false, false, false},        // Abs
    {"nn_s2list", 2, true, false, false},   // NnS2List
    {"nn_s2r", 2, true, false, false},      // NnS2R
    {"nn_s2v", 2, true, false, false},      // NnS2V
    {"nn_v2v", 2, true, false, false},      // NnV2V
    {"softmax", 1, false, false, false},    // Softmax
    {"kl", 2, false, false, false},         // KlDiv
    {"entropy", 1, false, false, false},    // Entropy
    {"const", 0, false, false, true},       // Const
    {"mul_tenth", 1, false, false, false},  // MulTenth
    {"normal", 0, false, true, false},      // Normal
    {"uniform", 0, false, true, false},     // Uniform
};

bool is_x_type(DType t) {
  return t == DType::Float || t == DType::State || t == DType::Vector;
}

// Result of combining two X operands under Float broadcasting; nullopt when
// the kinds are incompatible (e.g. State with Vector: lengths differ).
std::optional<DType> combine_x(DType a, DType b) {
  if (!is_x_type(a) || !is_x_type(b)) return std::nullopt;
  if (a == b) return a;
  if (a == DType::Float) return b;
  if (b == DType::Float) return a;
  return std::nullopt;
}

}  // namespace

const OpInfo& op_info(Op op) { return kOpTable[static_cast<int>(op)]; }

std::optional<Op> op_from_code(std::string_view code) {
  for (int i = 0; i < kOpCount; ++i) {
    if (kOpTable[i].code == code) return static_cast<Op>(i);
  }
  return std::nullopt;
}

std::optional<DType> op_output_type(Op op, std::span<const DType> p) {
  const int want = op_info(op).arity - (op_info(op).is_nn ? 1 : 0);
  if (static_cast<int>(p.size()) != want) return std::nullopt;
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Max:
    case Op::Min:
    case Op::Div:
      return combine_x(p[0], p[1]);
    case Op::Dot:
    case Op::L2Dist:
      if (!combine_x(p[0], p[1])) return std::nullopt;
      return DType::Float;
    case Op::MaxList:
    case Op::MinList:
    case Op::MeanList:
    case Op::VarList:
      if (!is_list_like(p[0])) return std::nullopt;
      return DType::Float;
    case Op::ArgMaxList:
      if (!is_list_like(p[0])) return std::nullopt;
      return DType::Action;
    case Op::SelectList:
      if (!is_list_like(p[0]) || p[1] != DType::Action) return std::nullopt;
      return DType::Float;
    case Op::Softmax:
      if (!is_list_like(p[0])) return std::nullopt;
      return DType::Probability;
    case Op::KlDiv:
      if (p[0] != DType::Probability || p[1] != DType::Probability) return std::nullopt;
      return DType::Float;
    case Op::Entropy:
      if (p[0] != DType::Probability) return std::nullopt;
      return DType::Float;
    case Op::Log:
    case Op::Exp:
    case Op::Abs:
    case Op::MulTenth:
      if (!is_x_type(p[0])) return std::nullopt;
      return p[0];
    case Op::NnS2List:
      if (p[0] != DType::State) return std::nullopt;
      return DType::FloatList;
    case Op::NnS2R:
      if (p[0] != DType::State) return std::nullopt;
      return DType::Float;
    case Op::NnS2V:
      if (p[0] != DType::State) return std::nullopt;
      return DType::Vector;
    case Op::NnV2V:
      if (p[0] != DType::Vector) return std::nullopt;
      return DType::Vector;
    case Op::Const:
    case Op::Normal:
    case Op::Uniform:
      return DType::Float;
  }
  return std::nullopt;
}

bool op_passes_gradient(Op op, int data_parent_index) {
  if (op == Op::ArgMaxList) return false;
  if (op == Op::SelectList) return data_parent_index == 0;
  return true;
}

}  // namespace evoloss
