#include "pelta/shield.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>

namespace pelta {

namespace {

// reachability over child edges, optionally refusing to enter `cut`
bool reaches(const Graph& g, NodeId from, const std::set<NodeId>& targets,
             const std::set<NodeId>& cut) {
  std::vector<NodeId> stack{from};
  std::set<NodeId> seen{from};
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    if (targets.count(u)) return true;
    for (NodeId c : g.children(u)) {
      if (cut.count(c) || seen.count(c)) continue;
      seen.insert(c);
      stack.push_back(c);
    }
  }
  return false;
}

bool is_ancestor(const Graph& g, NodeId a, NodeId b) {
  // a ancestor of b?
  std::vector<NodeId> stack{b};
  std::set<NodeId> seen{b};
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    for (NodeId p : g.node(u).parents) {
      if (p == a) return true;
      if (seen.insert(p).second) stack.push_back(p);
    }
  }
  return false;
}

std::set<NodeId> sink_targets(const Graph& g) {
  if (g.loss_node() != 0) return {g.loss_node()};
  std::set<NodeId> sinks;
  for (NodeId id = 1; id <= g.node_count(); ++id)
    if (g.children(id).empty() && !is_leaf_kind(g.node(id).kind)) sinks.insert(id);
  return sinks;
}

}  // namespace

ShieldSelection select(const Graph& g, const SelectPolicy& policy) {
  std::vector<NodeId> chosen;
  if (policy.kind == SelectPolicy::Kind::first_k_transforms) {
    if (policy.k < 1) throw GraphError("selection wants at least one transform");
    if (g.leaf_count() + policy.k > g.node_count())
      throw GraphError("selection of " + std::to_string(policy.k) +
                       " transforms exceeds the graph");
    for (int i = 1; i <= policy.k; ++i) chosen.push_back(g.leaf_count() + i);
  } else {
    for (const std::string& name : policy.names) {
      auto id = g.find_label(name);
      if (!id) throw GraphError("selection names unknown node '" + name + "'");
      chosen.push_back(*id);
    }
  }
  for (NodeId id : chosen) {
    if (id <= g.leaf_count())
      throw GraphError("selection includes leaf node " + std::to_string(id) +
                       "; masked nodes must come after every leaf");
    if (g.loss_node() != 0 && id == g.loss_node())
      throw GraphError("selection may not include the loss node");
  }
  // frontier = deepest of the chosen: drop any node with a chosen descendant
  ShieldSelection sel;
  for (NodeId u : chosen) {
    bool dominated = false;
    for (NodeId v : chosen)
      if (v != u && is_ancestor(g, u, v)) dominated = true;
    if (!dominated) sel.frontier.push_back(u);
  }
  std::sort(sel.frontier.begin(), sel.frontier.end());
  sel.frontier.erase(std::unique(sel.frontier.begin(), sel.frontier.end()),
                     sel.frontier.end());

  // the frontier must cut every clear path from the input to the loss,
  // otherwise correct gradients stay readable on the clear side
  std::set<NodeId> cut(sel.frontier.begin(), sel.frontier.end());
  if (reaches(g, g.input_node(), sink_targets(g), cut))
    throw GraphError("frontier does not dominate the input: a clear path bypasses it");
  return sel;
}

std::pair<Enclave, AttackerView> pelta_shield(const Graph& g, const ShieldSelection& sel,
                                              std::shared_ptr<AccessLog> log) {
  if (sel.frontier.empty()) throw GraphError("shield needs a nonempty frontier");
  Enclave enc;
  enc.frontier = sel.frontier;

  // recursive masking walk: hide the node value, hide the local jacobian for
  // input parents, then move on to every parent
  std::function<void(NodeId)> walk = [&](NodeId i) {
    if (!enc.masked_values.insert(i).second) return;
    for (NodeId j : g.node(i).parents) {
      if (g.node(j).kind == OpKind::Input) enc.masked_jacobians.insert({j, i});
      walk(j);
    }
  };
  for (NodeId u : sel.frontier) walk(u);

  return {enc, AttackerView(g, enc, std::move(log))};
}

AttackerView::AttackerView(const Graph& g, Enclave enclave, std::shared_ptr<AccessLog> log)
    : graph_(&g), enclave_(std::move(enclave)), log_(std::move(log)) {
  for (NodeId id = g.leaf_count() + 1; id <= g.node_count(); ++id) {
    if (enclave_.masked_values.count(id)) continue;
    for (NodeId p : g.node(id).parents)
      if (enclave_.masked_values.count(p)) {
        boundary_.push_back(id);
        break;
      }
  }
}

void AttackerView::deny(const std::string& what) const {
  if (log_) log_->record();
  throw MaskedAccessError("masked access: " + what);
}

const Tensor& AttackerView::value(const Graph& run, NodeId id) const {
  if (is_masked(id)) deny("value of node " + std::to_string(id));
  return run.value(id);
}

const Tensor& AttackerView::param(const ParamMap& params, NodeId id) const {
  if (is_masked(id)) deny("parameter " + std::to_string(id));
  auto it = params.find(id);
  if (it == params.end()) throw GraphError("no such parameter: " + std::to_string(id));
  return it->second;
}

const Tensor& AttackerView::attention_weights(const Graph& run, NodeId id) const {
  if (is_masked(id)) deny("attention weights of node " + std::to_string(id));
  return run.aux(id);
}

void AttackerView::check_jacobian(NodeId j, NodeId i) const {
  if (enclave_.masked_jacobians.count({j, i}))
    deny("jacobian " + std::to_string(j) + "->" + std::to_string(i));
}

NodeId AttackerView::boundary() const {
  if (boundary_.empty()) throw GraphError("shield has no clear boundary node");
  // residual taps can give the masked prefix several clear consumers; the
  // shallowest one (lowest vertex number) is the boundary
  return boundary_[0];
}

Tensor AttackerView::boundary_adjoint(Graph& run, NodeId from, const Tensor& seed) const {
  NodeId b = boundary();
  std::set<NodeId> stop(boundary_.begin(), boundary_.end());
  BackwardResult res = backward_seeded(run, from, seed, &stop);
  auto it = res.adjoints.find(b);
  if (it == res.adjoints.end()) return Tensor(run.node(b).shape, 0.0);
  return it->second;
}

Tensor attacker_gradient(const AttackerView& view, Graph& g, const Tensor& x, int y,
                         const ParamMap& params) {
  g.set_target(y);
  forward(g, x, params);
  NodeId loss = g.loss_node();
  return view.boundary_adjoint(g, loss, Tensor(g.node(loss).shape, 1.0));
}

namespace {

std::string mb_str(int64_t bytes) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(bytes) / 1e6);
  return buf;
}

}  // namespace

std::string MemoryReport::to_text() const {
  std::ostringstream out;
  out << "enclave memory estimate ("
      << (mode == FlushMode::worst_case_retain ? "worst_case_retain" : "flush_after_use")
      << ", batch " << batch << ")\n";
  out << "category      bytes            MB\n";
  auto row = [&](const char* name, int64_t b) {
    char line[96];
    std::snprintf(line, sizeof line, "%-12s  %-15lld  %s\n", name,
                  static_cast<long long>(b), mb_str(b).c_str());
    out << line;
  };
  row("weights", weights_bytes);
  row("biases", biases_bytes);
  row("activations", activations_bytes);
  row("gradients", gradients_bytes);
  row("jacobians", jacobians_bytes);
  row("total", total_bytes);
  char frac[64];
  std::snprintf(frac, sizeof frac, "shielded fraction: %.4f%% of model floats\n",
                100.0 * shielded_fraction);
  out << frac;
  out << "counting rules: 4 bytes per held scalar; weights/biases are masked\n"
         "parameters; activations are masked node values including the input\n"
         "copy, scaled by batch; gradients hold per-sample parameter gradients\n"
         "plus activation adjoints, scaled by batch; input-adjacent jacobians\n"
         "are parameterized by already-held weights and add no bytes; the\n"
         "fraction divides held floats by total model parameter floats.\n";
  return out.str();
}

MemoryReport estimate_enclave_memory(const Graph& g, const Enclave& enclave, FlushMode mode,
                                     int batch) {
  MemoryReport rep;
  rep.mode = mode;
  rep.batch = batch;
  int64_t weight_floats = 0, bias_floats = 0, act_per_sample = 0;
  for (NodeId id : enclave.masked_values) {
    const Node& nd = g.node(id);
    int64_t n = shape_size(nd.shape);
    if (nd.kind == OpKind::Parameter) {
      if (nd.attr_int("bias", 0))
        bias_floats += n;
      else
        weight_floats += n;
    } else {
      act_per_sample += n;  // transforms and the input copy
    }
  }
  // activations and gradients are per-pass state and scale with batch;
  // gradients hold the unreduced per-sample parameter gradients plus the
  // activation adjoints
  int64_t act_floats = 0, grad_floats = 0;
  if (mode == FlushMode::worst_case_retain) {
    act_floats = act_per_sample * batch;
    grad_floats = (weight_floats + bias_floats + act_per_sample) * batch;
  }
  rep.weights_bytes = 4 * weight_floats;
  rep.biases_bytes = 4 * bias_floats;
  rep.activations_bytes = 4 * act_floats;
  rep.gradients_bytes = 4 * grad_floats;
  rep.jacobians_bytes = 0;
  rep.total_bytes = rep.weights_bytes + rep.biases_bytes + rep.activations_bytes +
                    rep.gradients_bytes + rep.jacobians_bytes;
  int64_t model_floats = g.parameter_float_count();
  rep.shielded_fraction =
      model_floats > 0
          ? static_cast<double>(weight_floats + bias_floats + act_floats + grad_floats) /
                static_cast<double>(model_floats)
          : 0.0;
  return rep;
}

}  // namespace pelta
