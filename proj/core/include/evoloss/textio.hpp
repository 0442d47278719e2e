#pragma once

#include <string>

#include "evoloss/errors.hpp"
#include "evoloss/program.hpp"

namespace evoloss {

// Line-oriented program text:
//   # comment
//   <id> = input:<name>:<dtype>
//   <id> = param:<net_id>:<sig>
//   <id> = <op_code>(<parent>,<parent>)          op nodes
//   <id> = const():const=<value>
//   output = <id>
// Node ids are free-form labels; graph identity never depends on them. The
// net id "q_target" marks the frozen target network.
std::string serialize_program(const LossProgram& p);

// Throws ParseError (with 1-based line number) on malformed text. Requires
// the five canonical inputs and the q / q_target parameter nodes.
LossProgram parse_program(const std::string& text);

LossProgram load_program_file(const std::string& path);
void save_program_file(const LossProgram& p, const std::string& path);

}  // namespace evoloss
