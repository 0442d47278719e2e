#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "evoloss/value.hpp"

namespace evoloss {

enum class Op : std::uint8_t {
  Add,
  Sub,
  Max,
  Min,
  Dot,
  Div,
  L2Dist,
  MaxList,
  MinList,
  ArgMaxList,
  SelectList,
  MeanList,
  VarList,
  Log,
  Exp,
  Abs,
  NnS2List,
  NnS2R,
  NnS2V,
  NnV2V,
  Softmax,
  KlDiv,
  Entropy,
  Const,
  MulTenth,
  Normal,
  Uniform,
};

inline constexpr int kOpCount = 27;

struct OpInfo {
  std::string_view code;   // serialization spelling
  int arity;               // number of parents, including the net slot for nn ops
  bool is_nn;              // parent 0 must be a parameter node
  bool is_stochastic;      // draws noise at eval time
  bool has_const;          // carries a constant payload
};

const OpInfo& op_info(Op op);
std::optional<Op> op_from_code(std::string_view code);

// Constants menu for the Const op and for mutation/sampling.
inline constexpr std::array<double, 5> kConstMenu = {1.0, 0.5, 0.2, 0.1, 0.01};

// Elementwise ops and dot/l2dist work on X in {State, Float, Vector}, with
// Float broadcasting against either array kind. List ops accept FloatList or
// Probability. KlDiv/Entropy want Probability exactly.
//
// Returns the output type for the op applied to data parent types, or nullopt
// if the combination is ill-typed. For nn ops, pass only the data parent's
// type (the net slot is checked by the program validator).
std::optional<DType> op_output_type(Op op, std::span<const DType> data_parents);

// True if gradient flows from this op's output back into data parent `i`
// (argmax never passes gradient; select_list passes only through the list).
bool op_passes_gradient(Op op, int data_parent_index);

}  // namespace evoloss
