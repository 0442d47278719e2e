#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evoloss/ops.hpp"
#include "evoloss/value.hpp"

namespace evoloss {

enum class NodeKind : std::uint8_t { Input, Param, OpNode };

// Network signatures a parameter node can carry.
enum class NetSig : std::uint8_t { S2List, S2R, S2V, V2V };

const char* net_sig_name(NetSig sig);
std::optional<NetSig> net_sig_from_name(std::string_view name);

// The five transition inputs every program sees, in canonical slot order.
struct InputSlot {
  const char* name;
  DType type;
};
inline constexpr InputSlot kInputSlots[5] = {
    {"s_t", DType::State},   {"a_t", DType::Action}, {"r_t", DType::Float},
    {"s_tp1", DType::State}, {"gamma", DType::Float},
};
inline constexpr int kInputCount = 5;

struct Node {
  NodeKind kind = NodeKind::OpNode;
  std::string id;  // textual label; preserved by parse/serialize, ignored by equality

  int input_slot = -1;  // Input nodes: 0..4

  std::string net_id;     // Param nodes
  NetSig sig = NetSig::S2List;
  bool trainable = true;  // q_target is the one frozen net

  Op op = Op::Add;             // Op nodes
  std::vector<int> parents;    // indices of earlier nodes; nn ops put the net first
  double const_value = 0.0;

  static Node input(int slot);
  static Node param(std::string net_id, NetSig sig, bool trainable = true);
  static Node make_op(Op op, std::vector<int> parents, double const_value = 0.0);
};

struct LossProgram {
  std::vector<Node> nodes;
  int output = -1;

  int op_count() const;
  int find_node(std::string_view id) const;      // -1 when absent
  int find_param(std::string_view net_id) const; // -1 when absent

  // Index of the first op node; everything before it is the input/param
  // preamble that sampling and mutation never touch.
  int preamble_size() const;
};

// Inputs s_t a_t r_t s_tp1 gamma, then params q (s2list, trainable),
// q_target (s2list, frozen), aux1 (s2r), aux2 (s2v), aux3 (v2v).
LossProgram make_base_program();

enum class FailKind : std::uint8_t {
  OutputNotScalar,
  NotDifferentiable,
  TypeMismatch,
  Cycle,
  ArityError,
};
const char* fail_kind_name(FailKind k);

struct Failure {
  FailKind kind;
  int node;  // -1 when not tied to one node
};

struct ValidationReport {
  bool is_valid = false;
  std::vector<Failure> failures;
  bool has(FailKind k) const;
  std::string describe() const;
};

// Per-node derived types; nullopt for param nodes and for nodes downstream of
// a type error. `evaluable` means every node typed (hashing needs only this).
struct TypeInfo {
  std::vector<std::optional<DType>> types;
  std::vector<Failure> failures;
  bool evaluable = false;
  std::optional<DType> output_type;
};

TypeInfo derive_types(const LossProgram& p);

// Full structural check: typing plus scalar output plus a gradient path from
// some trainable network apply to the output.
ValidationReport validate_program(const LossProgram& p);

// Nodes that feed the output (directly or not). Output node included.
std::vector<char> reachable_from_output(const LossProgram& p);

// Structural identity, ignoring node ids.
bool structurally_equal(const LossProgram& a, const LossProgram& b);
std::uint64_t structural_fingerprint(const LossProgram& p);

}  // namespace evoloss
