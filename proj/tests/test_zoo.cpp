#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "pelta/shield.hpp"
#include "pelta/zoo.hpp"

using namespace pelta;

namespace {

Tensor random_image(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
  return t;
}

Tensor random_row_stochastic(int t, Rng& rng) {
  Tensor m({t, t});
  for (int i = 0; i < t; ++i) {
    double sum = 0.0;
    for (int j = 0; j < t; ++j) {
      double v = rng.uniform(0.01, 1.0);
      m.at(i, j) = v;
      sum += v;
    }
    for (int j = 0; j < t; ++j) m.at(i, j) /= sum;
  }
  return m;
}

}  // namespace

TEST_CASE("tiny vit: 16/8 spec yields 5 tokens entering block 1") {
  TinyViTSpec spec;
  Model m = build_tiny_vit(spec, 0);
  NodeId z0 = *m.graph.find_label("pos_add");
  CHECK(m.graph.node(z0).shape == Shape{5, 8});
  NodeId ln1 = *m.graph.find_label("blk0.ln1");
  CHECK(m.graph.node(ln1).shape == Shape{5, 8});
}

TEST_CASE("tiny vit: first transforms are PatchEmbed, Concat, PositionAdd in order") {
  TinyViTSpec spec;
  Model m = build_tiny_vit(spec, 0);
  int l = m.graph.leaf_count();
  CHECK(m.graph.node(l + 1).kind == OpKind::PatchEmbed);
  CHECK(m.graph.node(l + 2).kind == OpKind::Concat);
  CHECK(m.graph.node(l + 3).kind == OpKind::PositionAdd);
  // the topo order visits them in exactly this order
  std::vector<OpKind> first_three;
  for (NodeId id : m.graph.topo_order()) {
    if (id <= l) continue;
    first_three.push_back(m.graph.node(id).kind);
    if (first_three.size() == 3) break;
  }
  CHECK(first_three == std::vector<OpKind>{OpKind::PatchEmbed, OpKind::Concat,
                                           OpKind::PositionAdd});
}

TEST_CASE("tiny vit: spec invariants enforced") {
  TinyViTSpec bad;
  bad.image_size = 15;
  CHECK_THROWS_AS(build_tiny_vit(bad, 0), GraphError);
  TinyViTSpec bad2;
  bad2.embed_dim = 9;
  CHECK_THROWS_AS(build_tiny_vit(bad2, 0), GraphError);
}

TEST_CASE("tiny vit: attention rows sum to one") {
  TinyViTSpec spec;
  spec.n_blocks = 2;
  Model m = build_tiny_vit(spec, 3);
  Rng rng(3);
  predict(m, random_image({1, 16, 16}, rng));
  AttentionTrace trace = attention_trace(m.graph, m.attn_heads);
  REQUIRE(trace.size() == 2);
  for (const auto& blk : trace) {
    REQUIRE(blk.size() == 2);
    for (const Tensor& w : blk) {
      CHECK(w.shape() == Shape{5, 5});
      for (int i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int j = 0; j < 5; ++j) {
          row += w.at(i, j);
          CHECK(w.at(i, j) >= 0.0);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("tiny vit: shield masks exactly the embedding quantities") {
  TinyViTSpec spec;
  Model m = build_tiny_vit(spec, 1);
  ShieldSelection sel = select(m.graph, SelectPolicy::prefix(m.stem_labels));
  REQUIRE(sel.frontier.size() == 1);
  CHECK(m.graph.node(sel.frontier[0]).kind == OpKind::PositionAdd);
  auto [enc, view] = pelta_shield(m.graph, sel);
  std::set<NodeId> expect{
      m.graph.input_node(),
      *m.graph.find_label("patch_embed.E"),
      *m.graph.find_label("cls_token"),
      *m.graph.find_label("pos_embed"),
      *m.graph.find_label("patch_embed"),
      *m.graph.find_label("concat_cls"),
      *m.graph.find_label("pos_add"),
  };
  CHECK(enc.masked_values == expect);
  CHECK(enc.masked_jacobians ==
        std::set<std::pair<NodeId, NodeId>>{
            {m.graph.input_node(), *m.graph.find_label("patch_embed")}});
  CHECK(view.boundary() == *m.graph.find_label("blk0.ln1"));
}

TEST_CASE("ws cnn: constant kernel standardizes to zero, stem output is bias only") {
  Model m = build_ws_cnn(5);
  NodeId w = *m.graph.find_label("stem.w");
  NodeId bi = *m.graph.find_label("stem.b");
  // 0.5 sums exactly in binary, so the standardized taps are exactly zero
  for (int64_t i = 0; i < m.params.at(w).size(); ++i) m.params.at(w)[i] = 0.5;
  Rng rng(5);
  Tensor x = random_image({1, 16, 16}, rng);
  m.graph.set_target(0);
  forward(m.graph, x, m.params);
  const Tensor& std_kernel = m.graph.aux(*m.graph.find_label("stem_wsconv"));
  for (int64_t i = 0; i < std_kernel.size(); ++i) CHECK(std_kernel[i] == 0.0);
  const Tensor& conv_out = m.graph.value(*m.graph.find_label("stem_wsconv"));
  const Tensor& bias = m.params.at(bi);
  for (int c = 0; c < conv_out.dim(0); ++c)
    for (int y = 0; y < conv_out.dim(1); ++y)
      for (int xx = 0; xx < conv_out.dim(2); ++xx)
        CHECK(conv_out.at(c, y, xx) == bias[c]);
}

TEST_CASE("ws cnn: already-standardized kernel passes through unchanged") {
  Model ws = build_ws_cnn(9);
  Model plain = build_resnet_stem_cnn(9);
  // a +1/-1 checkerboard over the 16 taps has zero mean and unit variance
  NodeId w_ws = *ws.graph.find_label("stem.w");
  Tensor kernel({8, 1, 4, 4});
  for (int64_t i = 0; i < kernel.size(); ++i) kernel[i] = (i % 2 == 0) ? 1.0 : -1.0;
  ws.params.at(w_ws) = kernel;
  Rng rng(9);
  Tensor x = random_image({1, 16, 16}, rng);
  ws.graph.set_target(0);
  forward(ws.graph, x, ws.params);
  const Tensor& std_kernel = ws.graph.aux(*ws.graph.find_label("stem_wsconv"));
  // standardization of an already-standardized kernel moves taps only by the
  // epsilon guard
  for (int64_t i = 0; i < kernel.size(); ++i)
    CHECK(std_kernel[i] == doctest::Approx(kernel[i]).epsilon(1e-9));
  (void)plain;
}

TEST_CASE("ws cnn: standardized kernel has zero mean and unit variance") {
  Model m = build_ws_cnn(11);
  Rng rng(11);
  m.graph.set_target(0);
  forward(m.graph, random_image({1, 16, 16}, rng), m.params);
  const Tensor& k = m.graph.aux(*m.graph.find_label("stem_wsconv"));
  int taps = k.dim(1) * k.dim(2) * k.dim(3);
  for (int c = 0; c < k.dim(0); ++c) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < taps; ++i) mean += k[c * taps + i];
    mean /= taps;
    for (int i = 0; i < taps; ++i) var += (k[c * taps + i] - mean) * (k[c * taps + i] - mean);
    var /= taps;
    CHECK(std::fabs(mean) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("resnet stem: relu semantics inside the stem") {
  Model m = build_resnet_stem_cnn(2);
  Rng rng(2);
  m.graph.set_target(0);
  forward(m.graph, random_image({1, 16, 16}, rng), m.params);
  const Tensor& bn = m.graph.value(*m.graph.find_label("stem_bn"));
  const Tensor& relu = m.graph.value(*m.graph.find_label("stem_relu"));
  for (int64_t i = 0; i < bn.size(); ++i)
    CHECK(relu[i] == (bn[i] > 0.0 ? bn[i] : 0.0));
}

TEST_CASE("stem shields expose the expected frontiers") {
  Model ws = build_ws_cnn(1);
  ShieldSelection s1 = select(ws.graph, SelectPolicy::prefix(ws.stem_labels));
  REQUIRE(s1.frontier.size() == 1);
  CHECK(ws.graph.node(s1.frontier[0]).kind == OpKind::WeightStandardizedConv2d);

  Model rn = build_resnet_stem_cnn(1);
  ShieldSelection s2 = select(rn.graph, SelectPolicy::prefix(rn.stem_labels));
  REQUIRE(s2.frontier.size() == 1);
  CHECK(rn.graph.node(s2.frontier[0]).kind == OpKind::ReLU);
  auto [enc, view] = pelta_shield(rn.graph, s2);
  // conv weights, bias, and the batch-norm tensors all sit behind the mask
  for (const char* name : {"stem.w", "stem.b", "stem.bn.gamma", "stem.bn.beta",
                           "stem.bn.mean", "stem.bn.var"})
    CHECK(enc.masked_values.count(*rn.graph.find_label(name)) == 1);
}

TEST_CASE("ensemble: agreement and reproducibility") {
  EnsembleModel e;
  e.cnn = build_resnet_stem_cnn(21);
  e.vit = build_tiny_vit(TinyViTSpec{}, 22);
  e.selection_seed = 77;
  Rng rng(4);
  Tensor x = random_image({1, 16, 16}, rng);
  int lk = predict(e.cnn, x), lv = predict(e.vit, x);
  Rng c1(e.selection_seed), c2(e.selection_seed);
  auto [label1, member1] = ensemble_predict(e, x, c1);
  auto [label2, member2] = ensemble_predict(e, x, c2);
  CHECK(label1 == label2);
  CHECK(member1 == member2);
  CHECK(label1 == (member1 == 0 ? lk : lv));
  if (lk == lv) CHECK(label1 == lk);
}

TEST_CASE("ensemble: coin is fair within 3 sigma over 10000 flips") {
  EnsembleModel e;
  e.cnn = build_mlp(31);
  e.vit = build_tiny_vit(TinyViTSpec{}, 32);
  Rng coin(123);
  Rng rng(6);
  Tensor x = random_image({1, 16, 16}, rng);
  int k_count = 0;
  for (int i = 0; i < 10000; ++i) {
    auto [label, member] = ensemble_predict(e, x, coin);
    (void)label;
    if (member == 0) ++k_count;
  }
  CHECK(k_count > 5000 - 150);  // 3 * sqrt(10000 * 0.25) = 150
  CHECK(k_count < 5000 + 150);
}

TEST_CASE("attention rollout: identity heads") {
  // one block, one identity head: 0.5 I + 0.5 I = I
  AttentionTrace tr1{{Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})}};
  Tensor r1 = attention_rollout(tr1);
  CHECK(r1 == tr1[0][0]);
  // two identity heads are summed without renormalization: result 2 I
  AttentionTrace tr2{{tr1[0][0], tr1[0][0]}};
  Tensor r2 = attention_rollout(tr2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(r2.at(i, j) == (i == j ? 2.0 : 0.0));
}

TEST_CASE("attention rollout: matches a direct product oracle") {
  Rng rng(15);
  int t = 5;
  AttentionTrace trace;
  for (int blk = 0; blk < 2; ++blk) {
    std::vector<Tensor> row;
    for (int h = 0; h < 3; ++h) row.push_back(random_row_stochastic(t, rng));
    trace.push_back(std::move(row));
  }
  Tensor got = attention_rollout(trace);

  // direct re-evaluation: M_l = sum_h (0.5 W + 0.5 I); result = M2 * M1
  auto mixed = [&](int blk) {
    Tensor m({t, t});
    for (const Tensor& w : trace[static_cast<size_t>(blk)])
      for (int64_t i = 0; i < m.size(); ++i) m[i] += 0.5 * w[i];
    for (int i = 0; i < t; ++i) m.at(i, i) += 0.5 * 3.0;
    return m;
  };
  Tensor m1 = mixed(0), m2 = mixed(1);
  Tensor want({t, t});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) {
      double acc = 0.0;
      for (int k = 0; k < t; ++k) acc += m2.at(i, k) * m1.at(k, j);
      want.at(i, j) = acc;
    }
  for (int64_t i = 0; i < want.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  // entries stay nonnegative
  for (int64_t i = 0; i < got.size(); ++i) CHECK(got[i] >= 0.0);
}

TEST_CASE("attention rollout: empty trace is an error") {
  CHECK_THROWS_AS(attention_rollout({}), Error);
}

TEST_CASE("rollout_to_image: nearest-neighbor patch upsampling") {
  // 2x2 patch grid, class-token row = [cls, p0, p1, p2, p3]
  Tensor rollout({5, 5});
  rollout.at(0, 1) = 0.1;
  rollout.at(0, 2) = 0.2;
  rollout.at(0, 3) = 0.3;
  rollout.at(0, 4) = 0.4;
  Tensor img = rollout_to_image(rollout, 2, 4, 1);
  CHECK(img.at(0, 0, 0) == 0.1);
  CHECK(img.at(0, 1, 1) == 0.1);
  CHECK(img.at(0, 0, 3) == 0.2);
  CHECK(img.at(0, 3, 0) == 0.3);
  CHECK(img.at(0, 3, 3) == 0.4);
}

TEST_CASE("vit_l16 description: token and parameter arithmetic") {
  Graph g = vit_l16_description();
  NodeId z0 = *g.find_label("pos_add");
  CHECK(g.node(z0).shape == Shape{197, 1024});
  // the description is structural only; parameter floats are counted, not held
  CHECK(g.parameter_float_count() > 300'000'000);
  CHECK(g.parameter_float_count() < 310'000'000);
}

TEST_CASE("checkpoint round-trip preserves every parameter bitwise") {
  Model m = build_tiny_vit(TinyViTSpec{}, 42);
  std::string path = "test_ckpt.pzoo";
  save_checkpoint(m, path);
  Model fresh = build_tiny_vit(TinyViTSpec{}, 43);
  bool differs = false;
  for (NodeId id : m.graph.parameter_nodes())
    if (!(fresh.params.at(id) == m.params.at(id))) differs = true;
  CHECK(differs);
  load_checkpoint(fresh, path);
  for (NodeId id : m.graph.parameter_nodes()) CHECK(fresh.params.at(id) == m.params.at(id));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: bad magic and unknown names are errors") {
  std::string path = "test_ckpt_bad.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE1234";
  }
  Model m = build_mlp(1);
  CHECK_THROWS_AS(load_checkpoint(m, path), DataError);
  std::remove(path.c_str());
}
