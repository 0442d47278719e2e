#include "evoloss/textio.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace evoloss {
namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string format_const(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::string serialize_program(const LossProgram& p) {
  // Reuse stored ids when unique and non-empty, otherwise assign n<i>.
  std::vector<std::string> ids(p.nodes.size());
  std::unordered_map<std::string, int> used;
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    std::string id = p.nodes[i].id;
    if (id.empty() || used.count(id)) id = "n" + std::to_string(i);
    while (used.count(id)) id += "_";
    used[id] = static_cast<int>(i);
    ids[i] = id;
  }

  std::ostringstream out;
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    const Node& n = p.nodes[i];
    out << ids[i] << " = ";
    switch (n.kind) {
      case NodeKind::Input:
        out << "input:" << kInputSlots[n.input_slot].name << ":"
            << dtype_name(kInputSlots[n.input_slot].type);
        break;
      case NodeKind::Param:
        out << "param:" << n.net_id << ":" << net_sig_name(n.sig);
        break;
      case NodeKind::OpNode: {
        out << op_info(n.op).code << "(";
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          if (k) out << ",";
          out << ids[n.parents[k]];
        }
        out << ")";
        if (op_info(n.op).has_const) out << ":const=" << format_const(n.const_value);
        break;
      }
    }
    out << "\n";
  }
  if (p.output >= 0 && p.output < static_cast<int>(p.nodes.size())) {
    out << "output = " << ids[p.output] << "\n";
  }
  return out.str();
}

LossProgram parse_program(const std::string& text) {
  LossProgram p;
  std::unordered_map<std::string, int> by_id;
  bool saw_output = false;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected '<id> = <def>'");
    const std::string lhs = trim(line.substr(0, eq));
    const std::string rhs = trim(line.substr(eq + 1));
    if (lhs.empty() || rhs.empty()) throw ParseError(line_no, "expected '<id> = <def>'");

    if (lhs == "output") {
      auto it = by_id.find(rhs);
      if (it == by_id.end()) throw ParseError(line_no, "unknown node id '" + rhs + "'");
      if (p.nodes[it->second].kind == NodeKind::Param) {
        throw ParseError(line_no, "output cannot be a parameter node");
      }
      p.output = it->second;
      saw_output = true;
      continue;
    }
    if (by_id.count(lhs)) throw ParseError(line_no, "duplicate node id '" + lhs + "'");

    Node node;
    if (rhs.rfind("input:", 0) == 0) {
      const auto parts = split(rhs.substr(6), ':');
      if (parts.size() != 2) throw ParseError(line_no, "expected input:<name>:<dtype>");
      int slot = -1;
      for (int s = 0; s < kInputCount; ++s) {
        if (parts[0] == kInputSlots[s].name) slot = s;
      }
      if (slot < 0) throw ParseError(line_no, "unknown input '" + parts[0] + "'");
      if (parts[1] != dtype_name(kInputSlots[slot].type)) {
        throw ParseError(line_no, "input '" + parts[0] + "' has dtype " +
                                      dtype_name(kInputSlots[slot].type));
      }
      node = Node::input(slot);
      node.id = lhs;
    } else if (rhs.rfind("param:", 0) == 0) {
      const auto parts = split(rhs.substr(6), ':');
      if (parts.size() != 2) throw ParseError(line_no, "expected param:<net_id>:<sig>");
      const auto sig = net_sig_from_name(parts[1]);
      if (!sig) throw ParseError(line_no, "unknown net signature '" + parts[1] + "'");
      node = Node::param(parts[0], *sig, parts[0] != "q_target");
      node.id = lhs;
    } else {
      const auto open = rhs.find('(');
      if (open == std::string::npos) throw ParseError(line_no, "expected <op>(<parents>)");
      const auto close = rhs.find(')', open);
      if (close == std::string::npos) throw ParseError(line_no, "missing ')'");
      const std::string code = trim(rhs.substr(0, open));
      const auto op = op_from_code(code);
      if (!op) throw ParseError(line_no, "unknown op '" + code + "'");

      std::vector<int> parents;
      const std::string args = trim(rhs.substr(open + 1, close - open - 1));
      if (!args.empty()) {
        for (const std::string& arg : split(args, ',')) {
          auto it = by_id.find(arg);
          if (it == by_id.end()) throw ParseError(line_no, "unknown node id '" + arg + "'");
          parents.push_back(it->second);
        }
      }

      double const_value = 0.0;
      const std::string tail = trim(rhs.substr(close + 1));
      if (!tail.empty()) {
        if (tail.rfind(":const=", 0) != 0 || !op_info(*op).has_const) {
          throw ParseError(line_no, "unexpected trailing '" + tail + "'");
        }
        char* end = nullptr;
        const std::string num = tail.substr(7);
        const_value = std::strtod(num.c_str(), &end);
        if (end == num.c_str() || *end != '\0') {
          throw ParseError(line_no, "bad constant '" + num + "'");
        }
      } else if (op_info(*op).has_const) {
        throw ParseError(line_no, "op '" + code + "' needs :const=<value>");
      }
      node = Node::make_op(*op, std::move(parents), const_value);
      node.id = lhs;
    }

    by_id[lhs] = static_cast<int>(p.nodes.size());
    p.nodes.push_back(std::move(node));
  }

  if (!saw_output) throw ParseError(0, "missing 'output = <id>' line");
  for (int s = 0; s < kInputCount; ++s) {
    bool found = false;
    for (const Node& n : p.nodes) {
      if (n.kind == NodeKind::Input && n.input_slot == s) found = true;
    }
    if (!found) {
      throw ParseError(0, std::string("missing input '") + kInputSlots[s].name + "'");
    }
  }
  if (p.find_param("q") < 0) throw ParseError(0, "missing param 'q'");
  if (p.find_param("q_target") < 0) throw ParseError(0, "missing param 'q_target'");
  return p;
}

LossProgram load_program_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open program file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_program(buf.str());
}

void save_program_file(const LossProgram& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write program file: " + path);
  out << serialize_program(p);
}

}  // namespace evoloss
