#include "pelta/autograd.hpp"

#include <cmath>

namespace pelta {

ParamMap init_params(const Graph& g, uint64_t seed) {
  Rng rng(seed);
  ParamMap out;
  for (NodeId id : g.parameter_nodes()) {
    const Node& nd = g.node(id);
    auto scheme = static_cast<ParamInit>(nd.attr_int("init", 0));
    Tensor t(nd.shape);
    switch (scheme) {
      case ParamInit::uniform_fanin: {
        int fan_in = nd.attr_int("fan_in", nd.shape.empty() ? 1 : nd.shape[0]);
        double a = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
        break;
      }
      case ParamInit::zeros:
        break;
      case ParamInit::ones:
        for (int64_t i = 0; i < t.size(); ++i) t[i] = 1.0;
        break;
      case ParamInit::onehot0:
        t[0] = 1.0;
        break;
    }
    out.emplace(id, std::move(t));
  }
  return out;
}

void forward(Graph& g, const Tensor& input, const ParamMap& params) {
  g.clear_values();
  NodeId input_id = g.input_node();
  if (input.shape() != g.node(input_id).shape)
    throw ShapeError("input shape " + shape_str(input.shape()) + " does not match leaf " +
                     shape_str(g.node(input_id).shape));
  for (NodeId id = 1; id <= g.leaf_count(); ++id) {
    const Node& nd = g.node(id);
    if (nd.kind == OpKind::Input) {
      g.set_value(id, id == input_id ? input : Tensor(nd.shape));
    } else {
      auto it = params.find(id);
      if (it == params.end())
        throw GraphError("missing parameter for node " + std::to_string(id) +
                         (nd.label.empty() ? "" : " ('" + nd.label + "')"));
      if (it->second.shape() != nd.shape)
        throw ShapeError("parameter " + std::to_string(id) + " has shape " +
                         shape_str(it->second.shape()) + ", expected " + shape_str(nd.shape));
      g.set_value(id, it->second);
    }
  }
  for (NodeId id = g.leaf_count() + 1; id <= g.node_count(); ++id) {
    Tensor v = forward_op(g, id);
    if (!v.all_finite())
      throw NumericError("non-finite value at node " + std::to_string(id) +
                         (g.node(id).label.empty() ? "" : " ('" + g.node(id).label + "')"));
    g.set_value(id, std::move(v));
  }
  g.set_forward_done(true);
}

BackwardResult backward_seeded(Graph& g, NodeId from, const Tensor& seed,
                               const std::set<NodeId>* stop_at) {
  if (!g.forward_done()) throw GraphError("backward requires a completed forward pass");
  if (seed.shape() != g.node(from).shape)
    throw ShapeError("adjoint seed shape mismatch at node " + std::to_string(from));
  BackwardResult res;
  res.adjoints.emplace(from, seed);
  for (NodeId id = from; id >= 1; --id) {
    auto it = res.adjoints.find(id);
    if (it == res.adjoints.end()) continue;
    if (stop_at && stop_at->count(id)) continue;
    backward_op(g, id, it->second, res.adjoints);
  }
  NodeId input_id = g.input_node();
  auto it = res.adjoints.find(input_id);
  res.grad_wrt_input =
      it != res.adjoints.end() ? it->second : Tensor(g.node(input_id).shape, 0.0);
  return res;
}

BackwardResult backward(Graph& g, NodeId loss_node) {
  if (!g.forward_done()) throw GraphError("backward requires a completed forward pass");
  if (shape_size(g.node(loss_node).shape) != 1)
    throw GraphError("loss node " + std::to_string(loss_node) + " is not scalar");
  return backward_seeded(g, loss_node, Tensor(g.node(loss_node).shape, 1.0));
}

Tensor finite_diff_grad(Graph& g, const Tensor& input, double h) {
  if (!(h > 0.0)) throw Error("finite difference step must be positive");
  NodeId loss = g.loss_node();
  if (loss == 0) throw GraphError("graph has no loss node");
  ParamMap params;
  for (NodeId id : g.parameter_nodes()) params.emplace(id, g.value(id));
  Tensor grad(input.shape());
  Tensor x = input;
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    forward(g, x, params);
    double up = g.value(loss)[0];
    x[i] = orig - h;
    forward(g, x, params);
    double down = g.value(loss)[0];
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  forward(g, input, params);  // restore values at the evaluation point
  return grad;
}

}  // namespace pelta
