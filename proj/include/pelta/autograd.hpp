#pragma once

#include <cstdint>
#include <map>
#include <set>

#include "pelta/graph.hpp"
#include "pelta/rng.hpp"

namespace pelta {

using ParamMap = std::map<NodeId, Tensor>;

struct BackwardResult {
  std::map<NodeId, Tensor> adjoints;  // dLoss/du^i
  Tensor grad_wrt_input;
};

/// Draws parameters from a seeded stream. Parameter attrs select the scheme:
/// init=0 uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) (default), init=1 zeros,
/// init=2 ones, init=3 one-hot at index 0. fan_in defaults to the first dim.
enum class ParamInit { uniform_fanin = 0, zeros = 1, ones = 2, onehot0 = 3 };
ParamMap init_params(const Graph& g, uint64_t seed);

/// Evaluates every node; afterwards g.value(id) holds u^i for all i. Throws on
/// missing parameters, shape mismatch, or non-finite values.
void forward(Graph& g, const Tensor& input, const ParamMap& params);

BackwardResult backward(Graph& g, NodeId loss_node);

/// Reverse pass from an arbitrary node with a caller-supplied output adjoint.
/// Nodes in stop_at receive their accumulated adjoints but are not expanded,
/// so nothing upstream of them is touched.
BackwardResult backward_seeded(Graph& g, NodeId from, const Tensor& seed,
                               const std::set<NodeId>* stop_at = nullptr);

/// Central-difference d(loss)/d(input); the independent check for backward().
Tensor finite_diff_grad(Graph& g, const Tensor& input, double h);

// internal per-op entry points (ops.cpp)
Tensor forward_op(Graph& g, NodeId id);
void backward_op(Graph& g, NodeId id, const Tensor& gout, std::map<NodeId, Tensor>& sink);

}  // namespace pelta
