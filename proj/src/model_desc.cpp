#include "pelta/model_desc.hpp"

#include <cstdio>
#include <sstream>

namespace pelta {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string serialize_model(const Graph& g) {
  std::ostringstream out;
  out << "pelta-model v1\n";
  if (g.loss_node() != 0) out << "loss " << g.loss_node() << "\n";
  for (NodeId id = 1; id <= g.node_count(); ++id) {
    const Node& nd = g.node(id);
    out << "node " << id << " " << op_kind_name(nd.kind);
    if (!nd.label.empty()) out << " label=" << nd.label;
    if (!nd.parents.empty()) {
      out << " parents=";
      for (size_t i = 0; i < nd.parents.size(); ++i) {
        if (i) out << ",";
        out << nd.parents[i];
      }
    }
    if (is_leaf_kind(nd.kind)) {
      out << " shape=";
      for (size_t i = 0; i < nd.shape.size(); ++i) {
        if (i) out << ",";
        out << nd.shape[i];
      }
    }
    if (!nd.attrs.empty()) {
      out << " attrs=";
      bool first = true;
      for (const auto& [k, v] : nd.attrs) {
        if (!first) out << ";";
        first = false;
        out << k << ":" << format_double(v);
      }
    }
    out << "\n";
  }
  return out.str();
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw DataError("model description line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Graph parse_model(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line) || line != "pelta-model v1")
    throw DataError("model description header missing or unsupported");
  ++lineno;

  GraphBuilder builder;
  std::map<int, NodeId> handle;  // file id -> builder handle
  int loss_file_id = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "loss") {
      if (!(ls >> loss_file_id)) parse_fail(lineno, "loss wants a node id");
      continue;
    }
    if (word != "node") parse_fail(lineno, "expected 'node' or 'loss', got '" + word + "'");
    int file_id = 0;
    std::string kind_name;
    if (!(ls >> file_id >> kind_name)) parse_fail(lineno, "node wants '<id> <Kind>'");
    OpKind kind = OpKind::Input;
    try {
      kind = op_kind_from(kind_name);
    } catch (const GraphError& e) {
      parse_fail(lineno, e.what());
    }
    std::string label;
    std::vector<int> parents;
    Shape shape;
    Attrs attrs;
    std::string field;
    while (ls >> field) {
      auto eq = field.find('=');
      if (eq == std::string::npos) parse_fail(lineno, "malformed field '" + field + "'");
      std::string key = field.substr(0, eq), val = field.substr(eq + 1);
      if (key == "label") {
        label = val;
      } else if (key == "parents") {
        for (const std::string& p : split(val, ',')) {
          try {
            parents.push_back(std::stoi(p));
          } catch (...) {
            parse_fail(lineno, "bad parent id '" + p + "'");
          }
        }
      } else if (key == "shape") {
        for (const std::string& d : split(val, ',')) {
          try {
            shape.push_back(std::stoi(d));
          } catch (...) {
            parse_fail(lineno, "bad shape dim '" + d + "'");
          }
        }
      } else if (key == "attrs") {
        for (const std::string& kv : split(val, ';')) {
          auto colon = kv.find(':');
          if (colon == std::string::npos) parse_fail(lineno, "bad attr '" + kv + "'");
          try {
            attrs[kv.substr(0, colon)] = std::stod(kv.substr(colon + 1));
          } catch (...) {
            parse_fail(lineno, "bad attr value in '" + kv + "'");
          }
        }
      } else {
        parse_fail(lineno, "unknown field '" + key + "'");
      }
    }
    if (handle.count(file_id)) parse_fail(lineno, "duplicate node id");
    try {
      if (kind == OpKind::Input) {
        handle[file_id] = builder.input(shape, label);
      } else if (kind == OpKind::Parameter) {
        handle[file_id] = builder.param(shape, label, attrs);
      } else {
        std::vector<NodeId> ps;
        for (int p : parents) {
          auto it = handle.find(p);
          if (it == handle.end())
            parse_fail(lineno, "parent " + std::to_string(p) + " not defined yet");
          ps.push_back(it->second);
        }
        handle[file_id] = builder.op(kind, ps, attrs, label);
      }
    } catch (const Error& e) {
      parse_fail(lineno, e.what());
    }
  }
  NodeId loss = 0;
  if (loss_file_id != 0) {
    auto it = handle.find(loss_file_id);
    if (it == handle.end()) throw DataError("loss references undefined node");
    loss = it->second;
  }
  return builder.build(loss);
}

}  // namespace pelta
