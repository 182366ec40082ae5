#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pelta/attacks.hpp"

using namespace pelta;

namespace {

Tensor random_image(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.05, 0.95);
  return t;
}

AttackConfig base_cfg(AttackKind kind) {
  AttackConfig cfg;
  cfg.kind = kind;
  cfg.epsilon = 0.1;
  cfg.epsilon_step = 0.02;
  cfg.steps = 8;
  return cfg;
}

struct ShieldedModel {
  Model model;
  Enclave enclave;
  std::unique_ptr<AttackerView> view;
  std::shared_ptr<AccessLog> log;
};

ShieldedModel shielded(Model m) {
  ShieldedModel s;
  s.model = std::move(m);
  s.log = std::make_shared<AccessLog>();
  auto [enc, view] =
      pelta_shield(s.model.graph, select(s.model.graph, SelectPolicy::prefix(s.model.stem_labels)),
                   s.log);
  s.enclave = enc;
  s.view = std::make_unique<AttackerView>(view);
  return s;
}

}  // namespace

TEST_CASE("input_gradient: full mode equals the engine backward bitwise") {
  Model m = build_mlp(3);
  AttackTarget t(m, nullptr, 0);
  Rng rng(3);
  Tensor x = random_image({1, 16, 16}, rng);
  Tensor g1 = input_gradient(t, x, 1);
  m.graph.set_target(1);
  forward(m.graph, x, m.params);
  Tensor g2 = backward(m.graph, m.graph.loss_node()).grad_wrt_input;
  CHECK(g1 == g2);
  CHECK(t.queries == 1);
}

TEST_CASE("bpda upsampler: unit 1x1 kernel on an identity-shaped stem is a pass-through") {
  Upsampler up;
  up.kind = UpsampleKind::conv;
  up.kernel = Tensor({1, 1, 1, 1}, std::vector<double>{1.0});
  up.stride = 1;
  up.pad = 0;
  up.delta_grid = {1, 4, 4};
  up.out_shape = {1, 4, 4};
  Rng rng(0);
  Tensor delta = random_image({1, 4, 4}, rng);
  CHECK(up.apply(delta) == delta);
}

TEST_CASE("bpda gradients have the input shape on every zoo model") {
  std::vector<Model> models;
  models.push_back(build_mlp(1));
  models.push_back(build_ws_cnn(2));
  models.push_back(build_resnet_stem_cnn(3));
  models.push_back(build_tiny_vit(TinyViTSpec{}, 4));
  for (Model& m : models) {
    ShieldedModel s = shielded(std::move(m));
    AttackTarget t(s.model, s.view.get(), 99);
    Rng rng(5);
    Tensor x = random_image({1, 16, 16}, rng);
    Tensor g = input_gradient(t, x, 0);
    CHECK(g.shape() == Shape{1, 16, 16});
    CHECK(s.log->count() == 0);
  }
}

TEST_CASE("bpda upsampler is fixed across a run and reseeded across runs") {
  Model m1 = build_ws_cnn(7);
  ShieldedModel s = shielded(std::move(m1));
  AttackTarget t1(s.model, s.view.get(), 100);
  AttackTarget t2(s.model, s.view.get(), 100);
  AttackTarget t3(s.model, s.view.get(), 101);
  Rng rng(7);
  Tensor x = random_image({1, 16, 16}, rng);
  Tensor a = input_gradient(t1, x, 0);
  Tensor b = input_gradient(t1, x, 0);
  CHECK(a == b);  // same run, same kernel
  CHECK(input_gradient(t2, x, 0) == a);   // same seed, same kernel
  CHECK(!(input_gradient(t3, x, 0) == a));  // different seed
}

TEST_CASE("fgsm: epsilon 0 returns the origin") {
  Model m = build_mlp(11);
  AttackTarget t(m, nullptr, 0);
  Rng rng(11);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AttackConfig cfg = base_cfg(AttackKind::fgsm);
  cfg.epsilon = 0.0;
  AdvResult r = fgsm(t, x0, 0, cfg, rng);
  CHECK(r.x_adv == x0);
  CHECK(r.queries_used == 1);
}

TEST_CASE("fgsm: all-positive gradient shifts interior pixels by exactly epsilon") {
  // loss = mean(x) has gradient 1/n > 0 everywhere
  GraphBuilder b;
  NodeId x = b.input({1, 4, 4}, "input");
  NodeId w = b.param({16, 2}, "w");
  NodeId flat = b.op(OpKind::Reshape, {x}, reshape_attrs({16}), "flat");
  NodeId logits = b.op(OpKind::MatMul, {flat, w}, {}, "logits");
  NodeId loss = b.op(OpKind::CrossEntropyLoss, {logits});
  Model m;
  m.graph = b.build(loss);
  m.logits = *m.graph.find_label("logits");
  m.name = "toy";
  m.params.emplace(2, Tensor({16, 2}, 0.0));
  for (int i = 0; i < 16; ++i) m.params.at(2).at(i, 1) = 1.0;  // class-1 logit = sum(x)
  AttackTarget t(m, nullptr, 0);
  Tensor x0({1, 4, 4}, 0.5);
  AttackConfig cfg = base_cfg(AttackKind::fgsm);
  cfg.epsilon = 0.031;
  Rng rng(0);
  // attacking label 0 pushes class-1 logit up: gradient positive everywhere
  AdvResult r = fgsm(t, x0, 0, cfg, rng);
  for (int64_t i = 0; i < r.x_adv.size(); ++i)
    CHECK(r.x_adv[i] == 0.5 + 0.031);
}

TEST_CASE("reduction: single-step pgd with full step is fgsm, bitwise") {
  Model m = build_resnet_stem_cnn(13);
  Rng rng(13);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor x0 = random_image({1, 16, 16}, rng);
    AttackConfig f = base_cfg(AttackKind::fgsm);
    AttackConfig p = base_cfg(AttackKind::pgd);
    p.steps = 1;
    p.epsilon_step = p.epsilon;
    AttackTarget t1(m, nullptr, 0), t2(m, nullptr, 0);
    Rng r1(42), r2(42);
    AdvResult a = fgsm(t1, x0, 0, f, r1);
    AdvResult b = pgd(t2, x0, 0, p, r2);
    CHECK(a.x_adv == b.x_adv);
    CHECK(a.success == b.success);
    CHECK(a.queries_used == b.queries_used);
  }
}

TEST_CASE("reduction: zero-momentum mim is pgd, bitwise") {
  Model m = build_ws_cnn(14);
  Rng rng(14);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AttackConfig p = base_cfg(AttackKind::pgd);
  AttackConfig mi = base_cfg(AttackKind::mim);
  mi.mu = 0.0;
  AttackTarget t1(m, nullptr, 0), t2(m, nullptr, 0);
  Rng r1(42), r2(42);
  AdvResult a = pgd(t1, x0, 1, p, r1);
  AdvResult b = mim(t2, x0, 1, mi, r2);
  CHECK(a.x_adv == b.x_adv);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (size_t i = 0; i < a.trajectory.size(); ++i)
    CHECK(a.trajectory[i].loss == b.trajectory[i].loss);
}

TEST_CASE("mim: velocity accumulator matches a straight-line recomputation") {
  Model m = build_mlp(15);
  Rng rng(15);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AttackConfig cfg = base_cfg(AttackKind::mim);
  cfg.steps = 3;
  cfg.mu = 0.9;
  AttackTarget t(m, nullptr, 0);
  Rng r1(42);
  AdvResult got = mim(t, x0, 0, cfg, r1);

  // independent loop over the same recursion
  Model m2 = build_mlp(15);
  AttackTarget t2(m2, nullptr, 0);
  Tensor x = x0;
  Tensor acc({1, 16, 16}, 0.0);
  for (int i = 0; i < 3; ++i) {
    Tensor g = t2.loss_and_grad(x, 0).second;
    double n = l1_norm(g);
    for (int64_t j = 0; j < acc.size(); ++j) acc[j] = 0.9 * acc[j] + g[j] / n;
    Tensor s = sign(acc);
    for (int64_t j = 0; j < x.size(); ++j) x[j] += cfg.epsilon_step * s[j];
    x = clamp(clamp_ball(x, x0, cfg.epsilon), 0.0, 1.0);
  }
  CHECK(got.x_adv == x);
}

TEST_CASE("pgd: every iterate stays inside the ball and range") {
  Model m = build_resnet_stem_cnn(16);
  Rng rng(16);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor x0 = random_image({1, 16, 16}, rng);
    AttackConfig cfg = base_cfg(AttackKind::pgd);
    cfg.steps = 12;
    cfg.epsilon_step = 0.05;  // oversteps on purpose; projection must hold
    cfg.random_start = true;
    AttackTarget t(m, nullptr, 0);
    AdvResult r = pgd(t, x0, 0, cfg, rng);
    for (const TrajectoryPoint& p : r.trajectory) CHECK(p.linf <= cfg.epsilon + 1e-9);
    CHECK(linf_dist(r.x_adv, x0) <= cfg.epsilon + 1e-9);
    for (int64_t i = 0; i < r.x_adv.size(); ++i) {
      CHECK(r.x_adv[i] >= 0.0);
      CHECK(r.x_adv[i] <= 1.0);
    }
  }
}

TEST_CASE("apgd: halving conditions") {
  // monotone rise: every step in the window raised the loss, best improved
  // (fraction = 1 > rho = 0.75) -> no halving
  CHECK_FALSE(apgd_should_halve(8, 8, 0.75, 0.2, 0.2, 3.0, 1.0));
  // too few rises in the window -> halve
  CHECK(apgd_should_halve(5, 8, 0.75, 0.2, 0.2, 3.0, 1.0));
  // enough rises would pass, but the search is stalled (same step size, best
  // unchanged) -> halve
  CHECK(apgd_should_halve(8, 8, 0.75, 0.2, 0.2, 3.0, 3.0));
  // step size changed since the previous checkpoint -> not stalled
  CHECK_FALSE(apgd_should_halve(8, 8, 0.75, 0.1, 0.2, 3.0, 3.0));
}

TEST_CASE("apgd: zero gradient keeps the origin and fails") {
  GraphBuilder b;
  NodeId x = b.input({1, 4, 4}, "input");
  NodeId w = b.param({16, 2}, "w");
  NodeId flat = b.op(OpKind::Reshape, {x}, reshape_attrs({16}), "flat");
  NodeId logits = b.op(OpKind::MatMul, {flat, w}, {}, "logits");
  NodeId loss = b.op(OpKind::CrossEntropyLoss, {logits});
  Model m;
  m.graph = b.build(loss);
  m.logits = *m.graph.find_label("logits");
  m.params.emplace(2, Tensor({16, 2}, 0.0));  // all-zero weights: flat loss
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::apgd);
  cfg.query_budget = 100;
  cfg.steps = 10;
  Tensor x0({1, 4, 4}, 0.5);
  Rng rng(0);
  AdvResult r = apgd(t, x0, 0, cfg, rng);
  CHECK(r.x_adv == x0);
  CHECK_FALSE(r.success);
}

TEST_CASE("apgd: query budget is respected") {
  Model m = build_mlp(17);
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::apgd);
  cfg.steps = 50;
  cfg.query_budget = 60;
  cfg.n_restarts = 3;
  Rng rng(17);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AdvResult r = apgd(t, x0, 0, cfg, rng);
  CHECK(r.queries_used <= 60);
}

TEST_CASE("cw: c=0 reduces to pure distance minimization, origin is a fixed point") {
  Model m = build_mlp(18);
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::cw);
  cfg.cw_c = 0.0;
  cfg.steps = 10;
  Rng rng(18);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AdvResult r = cw(t, x0, 0, cfg, rng);
  // started at (the clamped copy of) x0; distance gradient is zero there
  CHECK(linf_dist(r.x_adv, x0) < 1e-9);
}

TEST_CASE("cw: already-misclassified origin with margin beyond kappa stays put") {
  Model m = build_mlp(19);
  Rng rng(19);
  Tensor x0 = random_image({1, 16, 16}, rng);
  AttackTarget t(m, nullptr, 0);
  int pred = t.predict(x0);
  int wrong_label = 1 - pred;  // attack the label the model does NOT predict
  AttackConfig cfg = base_cfg(AttackKind::cw);
  cfg.confidence = -1e9;  // hinge saturates at -kappa immediately
  cfg.steps = 12;
  AdvResult r = cw(t, x0, wrong_label, cfg, rng);
  CHECK(r.success);
  CHECK(linf_dist(r.x_adv, x0) < 1e-9);
}

TEST_CASE("cw: rejects clip ranges the tanh substitution cannot express") {
  Model m = build_mlp(20);
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::cw);
  cfg.clip_min = -1.0;
  Rng rng(20);
  CHECK_THROWS_AS(cw(t, Tensor({1, 16, 16}, 0.5), 0, cfg, rng), ConfigError);
}

TEST_CASE("random uniform: ball containment and reproducibility") {
  Model m = build_mlp(21);
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::random_uniform);
  Rng rng(21);
  Tensor x0 = random_image({1, 16, 16}, rng);
  Rng a1(5), a2(5);
  AdvResult r1 = random_uniform_attack(t, x0, 0, cfg, a1);
  AdvResult r2 = random_uniform_attack(t, x0, 0, cfg, a2);
  CHECK(r1.x_adv == r2.x_adv);
  CHECK(linf_dist(r1.x_adv, x0) <= cfg.epsilon + 1e-12);
  CHECK(r1.queries_used == 0);
}

namespace {

struct SagaSetup {
  Model cnn, vit;
  std::unique_ptr<AttackTarget> tk, tv;
  EnsembleTarget ens;
};

SagaSetup make_saga_setup(uint64_t seed) {
  SagaSetup s;
  s.cnn = build_resnet_stem_cnn(seed);
  s.vit = build_tiny_vit(TinyViTSpec{}, seed + 1);
  s.tk = std::make_unique<AttackTarget>(s.cnn, nullptr, 0);
  s.tv = std::make_unique<AttackTarget>(s.vit, nullptr, 0);
  s.ens.cnn = s.tk.get();
  s.ens.vit = s.tv.get();
  s.ens.coined_member = 0;
  return s;
}

}  // namespace

TEST_CASE("saga: blend matches an independent recomputation at fixed points") {
  SagaSetup s = make_saga_setup(23);
  AttackConfig cfg = base_cfg(AttackKind::saga);
  cfg.alpha_k = 0.3;
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_image({1, 16, 16}, rng);
    int y = trial % 2;
    Tensor gk = s.tk->loss_and_grad(x, y).second;
    Tensor gv = s.tv->loss_and_grad(x, y).second;
    Tensor rollout = attention_rollout(s.tv->attention_trace());
    Tensor phi = mul(rollout_to_image(rollout, 8, 16, 1), x);
    // straight-line blend
    Tensor want(x.shape());
    for (int64_t i = 0; i < want.size(); ++i)
      want[i] = 0.3 * gk[i] + 0.7 * phi[i] * gv[i];
    // one saga step from x reproduces sign(want) movement
    AttackConfig one = cfg;
    one.steps = 1;
    Rng r2(1);
    AdvResult step = saga(s.ens, x, y, one, r2);
    for (int64_t i = 0; i < want.size(); ++i) {
      double expect = std::min(std::max(x[i] + cfg.epsilon_step * sign(want[i]), 0.0), 1.0);
      CHECK(step.x_adv[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("saga: alpha_k=1 equals a signed step on the cnn member alone, bitwise") {
  SagaSetup s = make_saga_setup(29);
  AttackConfig cfg = base_cfg(AttackKind::saga);
  cfg.alpha_k = 1.0;
  cfg.steps = 5;
  Rng rng(29);
  Tensor x0 = random_image({1, 16, 16}, rng);
  Rng r1(2);
  AdvResult blended = saga(s.ens, x0, 0, cfg, r1);

  Model cnn2 = build_resnet_stem_cnn(29);
  AttackTarget t2(cnn2, nullptr, 0);
  AttackConfig p = base_cfg(AttackKind::pgd);
  p.steps = 5;
  Rng r2(2);
  AdvResult solo = pgd(t2, x0, 0, p, r2);
  CHECK(blended.x_adv == solo.x_adv);
}

TEST_CASE("saga: all-ones attention factor reduces to the vit member alone") {
  SagaSetup s = make_saga_setup(31);
  AttackConfig cfg = base_cfg(AttackKind::saga);
  cfg.alpha_k = 0.0;
  Rng rng(31);
  Tensor x = random_image({1, 16, 16}, rng);
  Tensor gv = s.tv->loss_and_grad(x, 0).second;
  Tensor rollout = attention_rollout(s.tv->attention_trace());
  Tensor phi = mul(rollout_to_image(rollout, 8, 16, 1), x);
  // with phi forced to ones the blend is exactly gv; verify via the identity
  // sign(1 * phi_i * gv_i) == sign(gv_i) whenever phi_i > 0
  for (int64_t i = 0; i < phi.size(); ++i)
    if (phi[i] > 0.0) CHECK(sign(phi[i] * gv[i]) == sign(gv[i]));
}

TEST_CASE("shielded attacks never touch masked quantities") {
  ShieldedModel s = shielded(build_resnet_stem_cnn(37));
  Rng rng(37);
  Tensor x0 = random_image({1, 16, 16}, rng);
  for (AttackKind kind : {AttackKind::fgsm, AttackKind::pgd, AttackKind::mim,
                          AttackKind::apgd, AttackKind::cw, AttackKind::random_uniform}) {
    AttackTarget t(s.model, s.view.get(), 7);
    AttackConfig cfg = base_cfg(kind);
    if (kind == AttackKind::apgd) cfg.query_budget = 100;
    Rng r(11);
    run_attack(t, x0, 0, cfg, r);
  }
  CHECK(s.log->count() == 0);
}

TEST_CASE("query accounting matches gradient calls exactly") {
  Model m = build_mlp(41);
  Rng rng(41);
  Tensor x0 = random_image({1, 16, 16}, rng);
  {
    AttackTarget t(m, nullptr, 0);
    AttackConfig cfg = base_cfg(AttackKind::pgd);
    cfg.steps = 7;
    Rng r(1);
    CHECK(pgd(t, x0, 0, cfg, r).queries_used == 7);
  }
  {
    AttackTarget t(m, nullptr, 0);
    AttackConfig cfg = base_cfg(AttackKind::cw);
    cfg.steps = 9;
    Rng r(1);
    CHECK(cw(t, x0, 0, cfg, r).queries_used == 9);
  }
}

TEST_CASE("trajectory csv dump") {
  Model m = build_mlp(43);
  AttackTarget t(m, nullptr, 0);
  AttackConfig cfg = base_cfg(AttackKind::pgd);
  cfg.steps = 3;
  Rng rng(43);
  AdvResult r = pgd(t, random_image({1, 16, 16}, rng), 0, cfg, rng);
  write_trajectory_csv(r, "traj_test.csv");
  std::ifstream f("traj_test.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header == "step,loss,linf_dist");
  int lines = 0;
  std::string line;
  while (std::getline(f, line)) ++lines;
  CHECK(lines == static_cast<int>(r.trajectory.size()));
  std::remove("traj_test.csv");
}
