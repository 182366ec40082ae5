#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pelta/tensor.hpp"

namespace pelta {

enum class OpKind {
  Input,
  Parameter,
  MatMul,
  Add,
  Conv2d,
  WeightStandardizedConv2d,
  ReLU,
  LayerNorm,
  BatchNorm,
  Softmax,
  PatchEmbed,
  PositionAdd,
  AttentionHead,
  Concat,
  Reshape,
  MaxPool,
  Mean,
  CrossEntropyLoss,
  TransposedConv2d,
  ElementwiseMul,
  ScalarMul,
};

const char* op_kind_name(OpKind k);
OpKind op_kind_from(const std::string& name);
inline bool is_leaf_kind(OpKind k) { return k == OpKind::Input || k == OpKind::Parameter; }

/// 1-based vertex number; leaves occupy 1..l, transforms l+1..n.
using NodeId = int;

using Attrs = std::map<std::string, double>;

struct Node {
  OpKind kind = OpKind::Input;
  std::vector<NodeId> parents;
  Shape shape;
  std::string label;
  Attrs attrs;

  double attr(const std::string& key, double dflt) const {
    auto it = attrs.find(key);
    return it == attrs.end() ? dflt : it->second;
  }
  int attr_int(const std::string& key, int dflt) const {
    return static_cast<int>(attr(key, dflt));
  }
  bool operator==(const Node& o) const {
    return kind == o.kind && parents == o.parents && shape == o.shape && label == o.label &&
           attrs == o.attrs;
  }
};

class Graph {
 public:
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const { return leaf_count_; }

  const Node& node(NodeId id) const { return nodes_[check(id)]; }
  Node& node_mut(NodeId id) { return nodes_[check(id)]; }

  const std::vector<std::pair<NodeId, NodeId>>& edges() const { return edges_; }
  const std::vector<NodeId>& topo_order() const { return topo_; }
  const std::vector<NodeId>& children(NodeId id) const { return children_[check(id)]; }

  NodeId input_node() const;  // lowest-numbered Input leaf
  NodeId loss_node() const { return loss_; }
  std::optional<NodeId> find_label(const std::string& label) const;
  std::vector<NodeId> parameter_nodes() const;
  int64_t parameter_float_count() const;

  // stored forward values (u^i); absent before the first pass
  bool has_value(NodeId id) const { return values_[check(id)].has_value(); }
  const Tensor& value(NodeId id) const;
  void set_value(NodeId id, Tensor t) { values_[check(id)] = std::move(t); }
  void clear_values();
  bool forward_done() const { return forward_done_; }
  void set_forward_done(bool v) { forward_done_ = v; }

  // per-node auxiliary state saved by forward (attention weights, pool argmax,
  // standardized kernels)
  bool has_aux(NodeId id) const { return aux_.count(id) != 0; }
  const Tensor& aux(NodeId id) const;
  void set_aux(NodeId id, Tensor t) { aux_[id] = std::move(t); }
  const std::vector<int64_t>& aux_idx(NodeId id) const;
  void set_aux_idx(NodeId id, std::vector<int64_t> v) { aux_idx_[id] = std::move(v); }

  void set_target(int label);  // class index for the loss node
  int target() const;

  void validate() const;

  bool same_structure(const Graph& o) const {
    return nodes_ == o.nodes_ && loss_ == o.loss_ && leaf_count_ == o.leaf_count_;
  }

 private:
  friend class GraphBuilder;
  size_t check(NodeId id) const {
    if (id < 1 || id > node_count()) throw GraphError("node id out of range: " + std::to_string(id));
    return static_cast<size_t>(id - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  std::vector<NodeId> topo_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<std::optional<Tensor>> values_;
  std::map<NodeId, Tensor> aux_;
  std::map<NodeId, std::vector<int64_t>> aux_idx_;
  int leaf_count_ = 0;
  NodeId loss_ = 0;
  bool forward_done_ = false;
};

/// Assembles a graph. Leaves and transforms may be added in any order; build()
/// renumbers so all leaves precede all transforms and every edge satisfies
/// j < i with i > l.
class GraphBuilder {
 public:
  NodeId input(Shape shape, std::string label = "input");
  NodeId param(Shape shape, std::string label, Attrs attrs = {});
  NodeId op(OpKind kind, std::vector<NodeId> parents, Attrs attrs = {}, std::string label = {});

  /// loss may be 0 for graphs without a scalar head (descriptions).
  Graph build(NodeId loss = 0);

 private:
  struct Pending {
    Node node;
    bool leaf;
  };
  std::vector<Pending> pending_;
};

Shape infer_shape(OpKind kind, const std::vector<const Node*>& parents, const Attrs& attrs,
                  const std::string& label);

inline Attrs reshape_attrs(const Shape& target) {
  Attrs a;
  a["rank"] = static_cast<double>(target.size());
  for (size_t i = 0; i < target.size(); ++i)
    a["d" + std::to_string(i)] = static_cast<double>(target[i]);
  return a;
}

}  // namespace pelta
