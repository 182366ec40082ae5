#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <set>

#include "pelta/rng.hpp"
#include "pelta/shield.hpp"

using namespace pelta;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// x -> MatMul(W) -> Softmax -> Mean loss
Graph linear_classifier() {
  GraphBuilder b;
  NodeId x = b.input({4});
  NodeId w = b.param({4, 2}, "w", {{"fan_in", 4.0}});
  NodeId mm = b.op(OpKind::MatMul, {x, w}, {}, "mm");
  NodeId sm = b.op(OpKind::Softmax, {mm}, {}, "sm");
  NodeId loss = b.op(OpKind::Mean, {sm});
  return b.build(loss);
}

Graph mlp_graph(int in_dim = 6, int hidden = 5, int classes = 3) {
  GraphBuilder b;
  NodeId x = b.input({in_dim});
  NodeId w1 = b.param({in_dim, hidden}, "w1", {{"fan_in", double(in_dim)}});
  NodeId b1 = b.param({hidden}, "b1", {{"fan_in", double(in_dim)}, {"bias", 1}});
  NodeId w2 = b.param({hidden, classes}, "w2", {{"fan_in", double(hidden)}});
  NodeId b2 = b.param({classes}, "b2", {{"fan_in", double(hidden)}, {"bias", 1}});
  NodeId a1 = b.op(OpKind::ReLU, {b.op(OpKind::Add, {b.op(OpKind::MatMul, {x, w1}), b1})});
  NodeId logits = b.op(OpKind::Add, {b.op(OpKind::MatMul, {a1, w2}), b2});
  return b.build(b.op(OpKind::CrossEntropyLoss, {logits}, {{"target", 0}}));
}

// two parallel stems that merge; masking only one leaks the other
Graph two_branch_graph() {
  GraphBuilder b;
  NodeId x = b.input({4});
  NodeId w1 = b.param({4, 3}, "wa");
  NodeId w2 = b.param({4, 3}, "wb");
  NodeId left = b.op(OpKind::MatMul, {x, w1}, {}, "left");
  NodeId right = b.op(OpKind::MatMul, {x, w2}, {}, "right");
  NodeId merged = b.op(OpKind::Add, {left, right});
  return b.build(b.op(OpKind::Mean, {merged}));
}

bool reaches_over_children(const Graph& g, NodeId from, NodeId to) {
  std::vector<NodeId> stack{from};
  std::set<NodeId> seen{from};
  while (!stack.empty()) {
    NodeId u = stack.back();
    stack.pop_back();
    if (u == to) return true;
    for (NodeId c : g.children(u))
      if (seen.insert(c).second) stack.push_back(c);
  }
  return false;
}

// random DAG over {2}-shaped values; every transform keeps a parent chain to
// the input so the whole prefix is input-reachable
struct RandomDag {
  Graph g;
  ShieldSelection sel;
};

RandomDag make_random_dag(uint64_t seed) {
  Rng rng(seed);
  GraphBuilder b;
  NodeId x = b.input({2});
  int n_params = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<NodeId> leaves{x};
  for (int i = 0; i < n_params; ++i)
    leaves.push_back(b.param({2}, "p" + std::to_string(i)));
  int n_ops = static_cast<int>(rng.uniform_int(3, 12 - 2 - n_params));
  auto pick = [&](const std::vector<NodeId>& v) {
    return v[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(v.size()) - 1))];
  };
  std::vector<NodeId> reachable{x};
  std::vector<NodeId> ops;
  for (int i = 0; i < n_ops; ++i) {
    NodeId main = pick(reachable);
    NodeId made = 0;
    switch (rng.uniform_int(0, 3)) {
      case 0:
        made = b.op(OpKind::ReLU, {main});
        break;
      case 1:
        made = b.op(OpKind::ScalarMul, {main}, {{"c", rng.uniform(0.5, 2.0)}});
        break;
      case 2:
        made = b.op(OpKind::Add, {main, pick(leaves)});
        break;
      default:
        made = b.op(OpKind::ElementwiseMul, {main, pick(reachable)});
        break;
    }
    reachable.push_back(made);
    ops.push_back(made);
  }
  NodeId loss = b.op(OpKind::Mean, {ops.back()});
  RandomDag out;
  out.g = b.build(loss);

  // builder handles for transforms map to ids leaf_count+1.. in insertion order
  int l = out.g.leaf_count();
  std::vector<NodeId> op_ids;
  for (int i = 0; i < n_ops; ++i) op_ids.push_back(l + 1 + i);
  std::set<NodeId> chosen;
  chosen.insert(pick(op_ids));
  if (rng.coin()) chosen.insert(pick(op_ids));
  // reduce to the deepest ones (no chosen node above another)
  for (NodeId u : chosen) {
    bool has_chosen_descendant = false;
    for (NodeId v : chosen)
      if (v != u && reaches_over_children(out.g, u, v)) has_chosen_descendant = true;
    if (!has_chosen_descendant) out.sel.frontier.push_back(u);
  }
  return out;
}

// brute force: enumerate every path input -> frontier over child edges; the
// expected masked set is all path members plus their Parameter parents
std::set<NodeId> path_oracle(const Graph& g, const std::vector<NodeId>& frontier) {
  std::set<NodeId> on_path;
  std::set<NodeId> targets(frontier.begin(), frontier.end());
  std::vector<NodeId> path{g.input_node()};
  std::function<void()> dfs = [&]() {
    NodeId u = path.back();
    if (targets.count(u)) on_path.insert(path.begin(), path.end());
    for (NodeId c : g.children(u)) {
      path.push_back(c);
      dfs();
      path.pop_back();
    }
  };
  dfs();
  std::set<NodeId> expect = on_path;
  for (NodeId u : on_path)
    for (NodeId p : g.node(u).parents)
      if (g.node(p).kind == OpKind::Parameter) expect.insert(p);
  return expect;
}

}  // namespace

TEST_CASE("select: first transform of the linear classifier") {
  Graph g = linear_classifier();
  ShieldSelection sel = select(g, SelectPolicy::first_k(1));
  REQUIRE(sel.frontier.size() == 1);
  CHECK(g.node(sel.frontier[0]).kind == OpKind::MatMul);
}

TEST_CASE("select: named prefix reduces to the deepest node") {
  Graph g = mlp_graph();
  // label the first three transforms
  NodeId t1 = g.leaf_count() + 1;
  g.node_mut(t1).label = "stem_mm";
  g.node_mut(t1 + 1).label = "stem_add";
  g.node_mut(t1 + 2).label = "stem_relu";
  ShieldSelection sel = select(g, SelectPolicy::prefix({"stem_mm", "stem_add", "stem_relu"}));
  REQUIRE(sel.frontier.size() == 1);
  CHECK(g.node(sel.frontier[0]).kind == OpKind::ReLU);
}

TEST_CASE("select: non-dominating frontier is rejected") {
  Graph g = two_branch_graph();
  CHECK_THROWS_WITH_AS(select(g, SelectPolicy::prefix({"left"})),
                       doctest::Contains("dominate"), GraphError);
  // both branches together do cut the input off
  ShieldSelection sel = select(g, SelectPolicy::prefix({"left", "right"}));
  CHECK(sel.frontier.size() == 2);
}

TEST_CASE("select: unknown label and leaf selection are errors") {
  Graph g = linear_classifier();
  CHECK_THROWS_AS(select(g, SelectPolicy::prefix({"nope"})), GraphError);
  CHECK_THROWS_WITH_AS(select(g, SelectPolicy::prefix({"w"})), doctest::Contains("leaf"),
                       GraphError);
  CHECK_THROWS_AS(select(g, SelectPolicy::first_k(99)), GraphError);
}

TEST_CASE("pelta_shield: minimal classifier masks value, weight, and jacobian") {
  Graph g = linear_classifier();
  NodeId x = g.input_node();
  NodeId w = *g.find_label("w");
  NodeId mm = *g.find_label("mm");
  NodeId sm = *g.find_label("sm");
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(1)));
  CHECK(enc.masked_values == std::set<NodeId>{x, w, mm});
  CHECK(enc.masked_jacobians == std::set<std::pair<NodeId, NodeId>>{{x, mm}});
  CHECK(view.boundary() == sm);

  ParamMap params = init_params(g, 0);
  Rng rng(0);
  forward(g, random_tensor({4}, rng), params);
  CHECK(view.value(g, sm).size() == 2);
  CHECK(view.value(g, g.loss_node()).size() == 1);
  CHECK_THROWS_AS(view.value(g, mm), MaskedAccessError);
  CHECK_THROWS_AS(view.param(params, w), MaskedAccessError);
  CHECK_THROWS_AS(view.check_jacobian(x, mm), MaskedAccessError);
  view.check_jacobian(mm, sm);  // clear jacobian passes
}

TEST_CASE("pelta_shield: masked set equals the path oracle on random DAGs") {
  int tested = 0;
  for (uint64_t seed = 0; tested < 50; ++seed) {
    RandomDag dag = make_random_dag(seed);
    if (dag.sel.frontier.empty()) continue;
    ++tested;
    auto [enc, view] = pelta_shield(dag.g, dag.sel);
    CHECK(enc.masked_values == path_oracle(dag.g, dag.sel.frontier));
  }
}

TEST_CASE("pelta_shield: minimality leaves the clear suffix visible") {
  for (uint64_t seed = 100; seed < 110; ++seed) {
    RandomDag dag = make_random_dag(seed);
    if (dag.sel.frontier.empty()) continue;
    auto [enc, view] = pelta_shield(dag.g, dag.sel);
    std::set<NodeId> expect = path_oracle(dag.g, dag.sel.frontier);
    for (NodeId id = 1; id <= dag.g.node_count(); ++id)
      if (!expect.count(id)) CHECK_FALSE(view.is_masked(id));
  }
}

TEST_CASE("pelta_shield: idempotent") {
  Graph g = mlp_graph();
  ShieldSelection sel = select(g, SelectPolicy::first_k(3));
  auto [enc1, v1] = pelta_shield(g, sel);
  auto [enc2, v2] = pelta_shield(g, sel);
  CHECK(enc1 == enc2);
  ShieldSelection again;
  again.frontier = enc1.frontier;
  auto [enc3, v3] = pelta_shield(g, again);
  CHECK(enc1 == enc3);
}

TEST_CASE("pelta_shield: empty frontier is rejected") {
  Graph g = mlp_graph();
  CHECK_THROWS_AS(pelta_shield(g, ShieldSelection{}), GraphError);
}

TEST_CASE("attacker_gradient equals the unshielded boundary adjoint bitwise") {
  Graph g = mlp_graph();
  ParamMap params = init_params(g, 7);
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(3)));
  NodeId boundary = view.boundary();
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({6}, rng);
    int y = trial % 3;
    Tensor delta = attacker_gradient(view, g, x, y, params);

    Graph clear = mlp_graph();
    clear.set_target(y);
    forward(clear, x, params);
    BackwardResult full = backward(clear, clear.loss_node());
    CHECK(delta == full.adjoints.at(boundary));
  }
}

TEST_CASE("attacker_gradient: constant head yields a zero adjoint") {
  GraphBuilder b;
  NodeId x = b.input({4});
  NodeId w = b.param({4, 3}, "w");
  NodeId mm = b.op(OpKind::MatMul, {x, w}, {}, "mm");
  NodeId act = b.op(OpKind::ReLU, {mm});
  NodeId zeroed = b.op(OpKind::ScalarMul, {act}, {{"c", 0.0}});
  NodeId loss = b.op(OpKind::Mean, {zeroed});
  Graph g = b.build(loss);
  ParamMap params = init_params(g, 1);
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(1)));
  Rng rng(1);
  Tensor delta = attacker_gradient(view, g, random_tensor({4}, rng), 0, params);
  for (int64_t i = 0; i < delta.size(); ++i) CHECK(delta[i] == 0.0);
}

TEST_CASE("masked access is an error value, not a zero tensor") {
  Graph g = mlp_graph();
  ParamMap params = init_params(g, 3);
  auto log = std::make_shared<AccessLog>();
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(3)), log);
  Rng rng(3);
  forward(g, random_tensor({6}, rng), params);
  long before = log->count();
  CHECK_THROWS_AS(view.value(g, g.input_node()), MaskedAccessError);
  CHECK(log->count() == before + 1);
}

TEST_CASE("memory estimate: flush mode keeps parameters only") {
  Graph g = linear_classifier();
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(1)));
  MemoryReport rep = estimate_enclave_memory(g, enc, FlushMode::flush_after_use);
  CHECK(rep.weights_bytes == 32);  // 4x2 floats
  CHECK(rep.activations_bytes == 0);
  CHECK(rep.gradients_bytes == 0);
  CHECK(rep.total_bytes == 32);
}

TEST_CASE("memory estimate: batch doubling scales pass state exactly") {
  Graph g = mlp_graph();
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(3)));
  MemoryReport r1 = estimate_enclave_memory(g, enc, FlushMode::worst_case_retain, 1);
  MemoryReport r2 = estimate_enclave_memory(g, enc, FlushMode::worst_case_retain, 2);
  CHECK(r2.activations_bytes == 2 * r1.activations_bytes);
  CHECK(r2.gradients_bytes == 2 * r1.gradients_bytes);
  CHECK(r2.weights_bytes == r1.weights_bytes);
  CHECK(r2.biases_bytes == r1.biases_bytes);
  CHECK(r1.total_bytes == r1.weights_bytes + r1.biases_bytes + r1.activations_bytes +
                              r1.gradients_bytes + r1.jacobians_bytes);
}

TEST_CASE("memory estimate: accounting identity 4 bytes per held scalar") {
  Graph g = mlp_graph();
  auto [enc, view] = pelta_shield(g, select(g, SelectPolicy::first_k(3)));
  int64_t held = 0;
  for (NodeId id : enc.masked_values) {
    int64_t n = shape_size(g.node(id).shape);
    held += n;                                            // the value itself
    held += n;                                            // its gradient
  }
  MemoryReport rep = estimate_enclave_memory(g, enc, FlushMode::worst_case_retain, 1);
  CHECK(rep.total_bytes == 4 * held);
  CHECK(rep.to_text().find("counting rules") != std::string::npos);
}
