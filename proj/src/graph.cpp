#include "pelta/graph.hpp"

#include <algorithm>
#include <array>

namespace pelta {

namespace {

constexpr std::array<const char*, 21> kOpNames = {
    "Input",         "Parameter",   "MatMul",    "Add",       "Conv2d",
    "WeightStandardizedConv2d",     "ReLU",      "LayerNorm", "BatchNorm",
    "Softmax",       "PatchEmbed",  "PositionAdd",
    "AttentionHead", "Concat",      "Reshape",   "MaxPool",   "Mean",
    "CrossEntropyLoss",             "TransposedConv2d",
    "ElementwiseMul", "ScalarMul"};

[[noreturn]] void shape_fail(const std::string& label, const std::string& msg) {
  throw ShapeError("node '" + label + "': " + msg);
}

void require_parents(const std::vector<const Node*>& parents, size_t lo, size_t hi,
                     const std::string& label) {
  if (parents.size() < lo || parents.size() > hi)
    shape_fail(label, "expected between " + std::to_string(lo) + " and " + std::to_string(hi) +
                          " parents, got " + std::to_string(parents.size()));
}

}  // namespace

const char* op_kind_name(OpKind k) { return kOpNames[static_cast<size_t>(k)]; }

OpKind op_kind_from(const std::string& name) {
  for (size_t i = 0; i < kOpNames.size(); ++i)
    if (name == kOpNames[i]) return static_cast<OpKind>(i);
  throw GraphError("unknown op kind '" + name + "'");
}

NodeId Graph::input_node() const {
  for (NodeId id = 1; id <= leaf_count_; ++id)
    if (nodes_[static_cast<size_t>(id - 1)].kind == OpKind::Input) return id;
  throw GraphError("graph has no Input leaf");
}

std::optional<NodeId> Graph::find_label(const std::string& label) const {
  for (NodeId id = 1; id <= node_count(); ++id)
    if (nodes_[static_cast<size_t>(id - 1)].label == label) return id;
  return std::nullopt;
}

std::vector<NodeId> Graph::parameter_nodes() const {
  std::vector<NodeId> out;
  for (NodeId id = 1; id <= leaf_count_; ++id)
    if (nodes_[static_cast<size_t>(id - 1)].kind == OpKind::Parameter) out.push_back(id);
  return out;
}

int64_t Graph::parameter_float_count() const {
  int64_t total = 0;
  for (NodeId id : parameter_nodes()) total += shape_size(node(id).shape);
  return total;
}

const Tensor& Graph::value(NodeId id) const {
  const auto& v = values_[check(id)];
  if (!v) throw GraphError("node " + std::to_string(id) + " has no stored value (run forward)");
  return *v;
}

void Graph::clear_values() {
  for (auto& v : values_) v.reset();
  aux_.clear();
  aux_idx_.clear();
  forward_done_ = false;
}

const Tensor& Graph::aux(NodeId id) const {
  auto it = aux_.find(id);
  if (it == aux_.end())
    throw GraphError("node " + std::to_string(id) + " has no auxiliary state");
  return it->second;
}

const std::vector<int64_t>& Graph::aux_idx(NodeId id) const {
  auto it = aux_idx_.find(id);
  if (it == aux_idx_.end())
    throw GraphError("node " + std::to_string(id) + " has no auxiliary indices");
  return it->second;
}

void Graph::set_target(int label) {
  if (loss_ == 0) throw GraphError("graph has no loss node");
  node_mut(loss_).attrs["target"] = static_cast<double>(label);
}

int Graph::target() const {
  if (loss_ == 0) throw GraphError("graph has no loss node");
  return node(loss_).attr_int("target", -1);
}

void Graph::validate() const {
  int n = node_count();
  int l = leaf_count_;
  if (!(1 <= l && l < n))
    throw GraphError("leaf/transform split violated: l=" + std::to_string(l) +
                     ", n=" + std::to_string(n));
  for (NodeId id = 1; id <= n; ++id) {
    const Node& nd = nodes_[static_cast<size_t>(id - 1)];
    bool leaf_pos = id <= l;
    if (leaf_pos != is_leaf_kind(nd.kind))
      throw GraphError("node " + std::to_string(id) + " placement inconsistent with kind");
    if (is_leaf_kind(nd.kind) && !nd.parents.empty())
      throw GraphError("leaf node " + std::to_string(id) + " has parents");
  }
  for (auto [j, i] : edges_) {
    if (!(j < i))
      throw GraphError("edge (" + std::to_string(j) + "," + std::to_string(i) +
                       ") violates j<i");
    if (!(j >= 1 && j <= n - 1 && i >= l + 1 && i <= n))
      throw GraphError("edge (" + std::to_string(j) + "," + std::to_string(i) +
                       ") out of range");
  }
  if (static_cast<int>(topo_.size()) != n) throw GraphError("topological order incomplete");
  // j < i for all edges already makes ascending id order topological
  std::vector<char> seen(static_cast<size_t>(n) + 1, 0);
  for (NodeId id : topo_) {
    for (NodeId p : node(id).parents)
      if (!seen[static_cast<size_t>(p)])
        throw GraphError("topological order visits node " + std::to_string(id) +
                         " before parent " + std::to_string(p));
    seen[static_cast<size_t>(id)] = 1;
  }
  bool has_input = false;
  for (NodeId id = 1; id <= l; ++id)
    if (node(id).kind == OpKind::Input) has_input = true;
  if (!has_input) throw GraphError("graph has no Input leaf");
  if (loss_ != 0 && shape_size(node(loss_).shape) != 1)
    throw GraphError("loss node is not scalar");
  // declared shapes must be reproducible from parents
  for (NodeId id = l + 1; id <= n; ++id) {
    const Node& nd = node(id);
    std::vector<const Node*> ps;
    for (NodeId p : nd.parents) ps.push_back(&node(p));
    Shape s = infer_shape(nd.kind, ps, nd.attrs, nd.label);
    if (s != nd.shape)
      shape_fail(nd.label.empty() ? std::to_string(id) : nd.label,
                 "declared shape " + shape_str(nd.shape) + " but inferred " + shape_str(s));
  }
}

NodeId GraphBuilder::input(Shape shape, std::string label) {
  Pending p;
  p.node.kind = OpKind::Input;
  p.node.shape = std::move(shape);
  p.node.label = std::move(label);
  p.leaf = true;
  pending_.push_back(std::move(p));
  return static_cast<NodeId>(pending_.size());
}

NodeId GraphBuilder::param(Shape shape, std::string label, Attrs attrs) {
  Pending p;
  p.node.kind = OpKind::Parameter;
  p.node.shape = std::move(shape);
  p.node.label = std::move(label);
  p.node.attrs = std::move(attrs);
  p.leaf = true;
  pending_.push_back(std::move(p));
  return static_cast<NodeId>(pending_.size());
}

NodeId GraphBuilder::op(OpKind kind, std::vector<NodeId> parents, Attrs attrs,
                        std::string label) {
  if (is_leaf_kind(kind)) throw GraphError("leaf kinds take no parents; use input()/param()");
  Pending p;
  p.node.kind = kind;
  p.node.parents = std::move(parents);
  p.node.attrs = std::move(attrs);
  p.node.label = std::move(label);
  p.leaf = false;
  for (NodeId pa : p.node.parents)
    if (pa < 1 || pa > static_cast<NodeId>(pending_.size()))
      throw GraphError("parent id " + std::to_string(pa) + " not yet defined");
  pending_.push_back(std::move(p));
  return static_cast<NodeId>(pending_.size());
}

Graph GraphBuilder::build(NodeId loss) {
  // renumber: leaves first (original order), then transforms (original order)
  int n = static_cast<int>(pending_.size());
  std::vector<NodeId> remap(static_cast<size_t>(n) + 1, 0);
  NodeId next = 1;
  for (int i = 0; i < n; ++i)
    if (pending_[static_cast<size_t>(i)].leaf) remap[static_cast<size_t>(i) + 1] = next++;
  int leaf_count = next - 1;
  for (int i = 0; i < n; ++i)
    if (!pending_[static_cast<size_t>(i)].leaf) remap[static_cast<size_t>(i) + 1] = next++;

  Graph g;
  g.leaf_count_ = leaf_count;
  g.nodes_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Node nd = pending_[static_cast<size_t>(i)].node;
    for (NodeId& p : nd.parents) p = remap[static_cast<size_t>(p)];
    g.nodes_[static_cast<size_t>(remap[static_cast<size_t>(i) + 1]) - 1] = std::move(nd);
  }
  for (NodeId id = 1; id <= n; ++id) {
    for (NodeId p : g.nodes_[static_cast<size_t>(id - 1)].parents) {
      if (p >= id)
        throw GraphError("edge (" + std::to_string(p) + "," + std::to_string(id) +
                         ") violates j<i");
      g.edges_.emplace_back(p, id);
    }
  }
  g.topo_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) g.topo_[static_cast<size_t>(i)] = i + 1;
  g.children_.assign(static_cast<size_t>(n), {});
  for (auto [j, i] : g.edges_) g.children_[static_cast<size_t>(j - 1)].push_back(i);
  g.values_.resize(static_cast<size_t>(n));
  g.loss_ = loss == 0 ? 0 : remap[static_cast<size_t>(loss)];

  // infer shapes for transforms in topological order
  for (NodeId id = leaf_count + 1; id <= n; ++id) {
    Node& nd = g.nodes_[static_cast<size_t>(id - 1)];
    std::vector<const Node*> ps;
    for (NodeId p : nd.parents) ps.push_back(&g.nodes_[static_cast<size_t>(p - 1)]);
    nd.shape = infer_shape(nd.kind, ps, nd.attrs,
                           nd.label.empty() ? std::to_string(id) : nd.label);
  }
  g.validate();
  pending_.clear();
  return g;
}

Shape infer_shape(OpKind kind, const std::vector<const Node*>& parents, const Attrs& attrs,
                  const std::string& label) {
  auto attr_int = [&](const std::string& key, int dflt) {
    auto it = attrs.find(key);
    return it == attrs.end() ? dflt : static_cast<int>(it->second);
  };
  switch (kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      throw GraphError("leaf shapes are declared, not inferred");
    case OpKind::MatMul: {
      require_parents(parents, 2, 2, label);
      const Shape& a = parents[0]->shape;
      const Shape& b = parents[1]->shape;
      if (b.size() != 2) shape_fail(label, "matmul rhs must be rank 2, got " + shape_str(b));
      if (a.size() == 1) {
        if (a[0] != b[0])
          shape_fail(label, "matmul inner dims differ: " + shape_str(a) + " x " + shape_str(b));
        return {b[1]};
      }
      if (a.size() == 2) {
        if (a[1] != b[0])
          shape_fail(label, "matmul inner dims differ: " + shape_str(a) + " x " + shape_str(b));
        return {a[0], b[1]};
      }
      shape_fail(label, "matmul lhs must be rank 1 or 2, got " + shape_str(a));
    }
    case OpKind::Add: {
      require_parents(parents, 2, 2, label);
      const Shape& a = parents[0]->shape;
      const Shape& b = parents[1]->shape;
      if (a == b) return a;
      if (b.size() == 1 && !a.empty() && a.back() == b[0]) return a;  // bias broadcast
      shape_fail(label, "add operands incompatible: " + shape_str(a) + " vs " + shape_str(b));
    }
    case OpKind::Conv2d:
    case OpKind::WeightStandardizedConv2d: {
      require_parents(parents, 2, 3, label);
      const Shape& x = parents[0]->shape;
      const Shape& w = parents[1]->shape;
      if (x.size() != 3) shape_fail(label, "conv input must be [C,H,W], got " + shape_str(x));
      if (w.size() != 4) shape_fail(label, "conv kernel must be [Co,Ci,kh,kw]");
      if (w[1] != x[0]) shape_fail(label, "conv kernel channel mismatch");
      if (parents.size() == 3 &&
          (parents[2]->shape.size() != 1 || parents[2]->shape[0] != w[0]))
        shape_fail(label, "conv bias must be [Co]");
      int s = attr_int("stride", 1), p = attr_int("pad", 0);
      int ho = (x[1] + 2 * p - w[2]) / s + 1;
      int wo = (x[2] + 2 * p - w[3]) / s + 1;
      if (ho < 1 || wo < 1 || (x[1] + 2 * p - w[2]) % s != 0 || (x[2] + 2 * p - w[3]) % s != 0)
        shape_fail(label, "conv geometry does not tile the input");
      return {w[0], ho, wo};
    }
    case OpKind::ReLU:
      require_parents(parents, 1, 1, label);
      return parents[0]->shape;
    case OpKind::LayerNorm: {
      require_parents(parents, 3, 3, label);
      const Shape& x = parents[0]->shape;
      if (x.empty()) shape_fail(label, "layernorm input must have rank >= 1");
      int d = x.back();
      for (int i = 1; i < 3; ++i)
        if (parents[static_cast<size_t>(i)]->shape != Shape{d})
          shape_fail(label, "layernorm scale/shift must be [" + std::to_string(d) + "]");
      return x;
    }
    case OpKind::BatchNorm: {
      require_parents(parents, 5, 5, label);
      const Shape& x = parents[0]->shape;
      if (x.size() != 3) shape_fail(label, "batchnorm input must be [C,H,W]");
      for (int i = 1; i < 5; ++i)
        if (parents[static_cast<size_t>(i)]->shape != Shape{x[0]})
          shape_fail(label, "batchnorm per-channel tensors must be [" + std::to_string(x[0]) + "]");
      return x;
    }
    case OpKind::Softmax:
      require_parents(parents, 1, 1, label);
      return parents[0]->shape;
    case OpKind::PatchEmbed: {
      require_parents(parents, 2, 2, label);
      const Shape& x = parents[0]->shape;
      const Shape& e = parents[1]->shape;
      int p = attr_int("patch", 0);
      if (x.size() != 3) shape_fail(label, "patch embed input must be [C,H,W]");
      if (p <= 0 || x[1] % p != 0 || x[2] % p != 0)
        shape_fail(label, "image size not divisible by patch size");
      int patch_dim = x[0] * p * p;
      if (e.size() != 2 || e[0] != patch_dim)
        shape_fail(label, "embedding matrix must be [" + std::to_string(patch_dim) + ",D]");
      int n_patches = (x[1] / p) * (x[2] / p);
      return {n_patches, e[1]};
    }
    case OpKind::PositionAdd: {
      require_parents(parents, 2, 2, label);
      if (parents[0]->shape != parents[1]->shape)
        shape_fail(label, "position table must match token shape");
      return parents[0]->shape;
    }
    case OpKind::AttentionHead: {
      require_parents(parents, 4, 4, label);
      const Shape& x = parents[0]->shape;
      if (x.size() != 2) shape_fail(label, "attention input must be [T,D]");
      int d = x[1];
      int dh = parents[1]->shape.size() == 2 ? parents[1]->shape[1] : -1;
      for (int i = 1; i < 4; ++i) {
        const Shape& w = parents[static_cast<size_t>(i)]->shape;
        if (w.size() != 2 || w[0] != d || w[1] != dh)
          shape_fail(label, "attention projections must all be [D,dh]");
      }
      return {x[0], dh};
    }
    case OpKind::Concat: {
      require_parents(parents, 2, 16, label);
      int axis = attr_int("axis", 0);
      Shape s = parents[0]->shape;
      if (s.size() != 2 || (axis != 0 && axis != 1))
        shape_fail(label, "concat supports rank-2 operands on axis 0 or 1");
      for (size_t i = 1; i < parents.size(); ++i) {
        const Shape& o = parents[i]->shape;
        if (o.size() != 2 || o[1 - axis] != s[1 - axis])
          shape_fail(label, "concat operand " + std::to_string(i) + " shape mismatch");
        s[axis] += o[axis];
      }
      return s;
    }
    case OpKind::Reshape: {
      require_parents(parents, 1, 1, label);
      Shape target;
      int rank = attr_int("rank", 0);
      for (int i = 0; i < rank; ++i) target.push_back(attr_int("d" + std::to_string(i), 0));
      if (shape_size(target) != shape_size(parents[0]->shape))
        shape_fail(label, "reshape changes element count");
      return target;
    }
    case OpKind::MaxPool: {
      require_parents(parents, 1, 1, label);
      const Shape& x = parents[0]->shape;
      if (x.size() != 3) shape_fail(label, "maxpool input must be [C,H,W]");
      int k = attr_int("kernel", 2), s = attr_int("stride", attr_int("kernel", 2));
      if ((x[1] - k) % s != 0 || (x[2] - k) % s != 0)
        shape_fail(label, "pool geometry does not tile the input");
      return {x[0], (x[1] - k) / s + 1, (x[2] - k) / s + 1};
    }
    case OpKind::Mean:
      require_parents(parents, 1, 1, label);
      return {1};
    case OpKind::CrossEntropyLoss: {
      require_parents(parents, 1, 1, label);
      if (parents[0]->shape.size() != 1)
        shape_fail(label, "cross-entropy expects a logits vector");
      return {1};
    }
    case OpKind::TransposedConv2d: {
      require_parents(parents, 2, 3, label);
      const Shape& x = parents[0]->shape;
      const Shape& w = parents[1]->shape;
      if (x.size() != 3) shape_fail(label, "tconv input must be [C,H,W]");
      if (w.size() != 4 || w[0] != x[0]) shape_fail(label, "tconv kernel must be [Ci,Co,kh,kw]");
      if (parents.size() == 3 &&
          (parents[2]->shape.size() != 1 || parents[2]->shape[0] != w[1]))
        shape_fail(label, "tconv bias must be [Co]");
      int s = attr_int("stride", 1), p = attr_int("pad", 0);
      int ho = (x[1] - 1) * s + w[2] - 2 * p;
      int wo = (x[2] - 1) * s + w[3] - 2 * p;
      if (ho < 1 || wo < 1) shape_fail(label, "tconv output collapses to nothing");
      return {w[1], ho, wo};
    }
    case OpKind::ElementwiseMul: {
      require_parents(parents, 2, 2, label);
      if (parents[0]->shape != parents[1]->shape)
        shape_fail(label, "elementwise mul operands must match");
      return parents[0]->shape;
    }
    case OpKind::ScalarMul:
      require_parents(parents, 1, 1, label);
      return parents[0]->shape;
  }
  throw GraphError("unhandled op kind");
}

}  // namespace pelta
