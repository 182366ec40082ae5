#include "pelta/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "pelta/kernels.hpp"
#include "pelta/model_desc.hpp"

namespace pelta {

namespace {
constexpr std::array<const char*, 7> kAttackNames = {"fgsm", "pgd",  "mim",           "apgd",
                                                     "cw",   "saga", "random_uniform"};
}

const char* attack_kind_name(AttackKind k) { return kAttackNames[static_cast<size_t>(k)]; }

AttackKind attack_kind_from(const std::string& name) {
  for (size_t i = 0; i < kAttackNames.size(); ++i)
    if (name == kAttackNames[i]) return static_cast<AttackKind>(i);
  throw ConfigError("unknown attack '" + name + "'");
}

void AttackConfig::validate() const {
  if (epsilon < 0) throw ConfigError("epsilon must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(clip_min < clip_max)) throw ConfigError("clip range is empty");
  if (mu < 0) throw ConfigError("mu must be >= 0");
  if (kind == AttackKind::apgd) {
    if (!(rho > 0 && rho < 1)) throw ConfigError("rho must be in (0,1)");
    if (query_budget < steps) throw ConfigError("query budget below step count");
  }
  if (alpha_k < 0 || alpha_k > 1) throw ConfigError("alpha_k must be in [0,1]");
  if (norm != "linf" && norm != "l2") throw ConfigError("norm must be linf or l2");
}

Tensor Upsampler::apply(const Tensor& delta) const {
  if (kind == UpsampleKind::dense) {
    int out_n = kernel.dim(0), in_n = kernel.dim(1);
    if (delta.size() != in_n) throw ShapeError("boundary adjoint size mismatch for upsampler");
    Tensor out(out_shape);
    kernels::matmul(kernel.data(), delta.data(), out.data(), out_n, in_n, 1);
    return out;
  }
  Tensor grid(delta_grid);
  if (kind == UpsampleKind::token_grid) {
    // token rows (class token dropped) -> [D, gh, gw]
    int d = kernel.dim(0);
    int gh = delta_grid[1], gw = delta_grid[2];
    if (delta.rank() != 2 || delta.dim(0) != gh * gw + 1 || delta.dim(1) != d)
      throw ShapeError("token adjoint shape mismatch for upsampler");
    for (int t = 0; t < gh * gw; ++t)
      for (int c = 0; c < d; ++c)
        grid.at(c, t / gw, t % gw) = delta.at(t + 1, c);
  } else {
    if (delta.size() != grid.size())
      throw ShapeError("feature-map adjoint size mismatch for upsampler");
    std::copy(delta.data(), delta.data() + delta.size(), grid.data());
  }
  Tensor out(out_shape);
  kernels::tconv2d(grid.data(), kernel.data(), nullptr, out.data(), grid.dim(0), grid.dim(1),
                   grid.dim(2), kernel.dim(1), kernel.dim(2), kernel.dim(3), stride, pad);
  return out;
}

Upsampler make_upsampler(const Model& m, const Shape& delta_shape, uint64_t seed) {
  Rng rng(seed);
  Upsampler up;
  up.kind = m.upsample;
  up.out_shape = m.graph.node(m.graph.input_node()).shape;
  int channels = up.out_shape[0];
  auto fill = [&](Tensor& t, int fan_in) {
    double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  };
  switch (m.upsample) {
    case UpsampleKind::token_grid: {
      int d = delta_shape[1];
      int grid = up.out_shape[1] / m.patch;
      up.kernel = Tensor({d, channels, m.patch, m.patch});
      up.stride = m.patch;
      up.pad = 0;
      up.patch = m.patch;
      up.delta_grid = {d, grid, grid};
      fill(up.kernel, d * m.patch * m.patch);
      break;
    }
    case UpsampleKind::conv: {
      up.delta_grid = m.stem_out_shape;
      up.kernel = Tensor({up.delta_grid[0], channels, m.stem_kernel, m.stem_kernel});
      up.stride = m.stem_stride;
      up.pad = m.stem_pad;
      fill(up.kernel, up.delta_grid[0] * m.stem_kernel * m.stem_kernel);
      break;
    }
    case UpsampleKind::dense: {
      int in_n = static_cast<int>(shape_size(delta_shape));
      int out_n = static_cast<int>(shape_size(up.out_shape));
      up.kernel = Tensor({out_n, in_n});
      fill(up.kernel, in_n);
      break;
    }
  }
  return up;
}

AttackTarget::AttackTarget(Model& m, const AttackerView* view, uint64_t upsampler_seed)
    : model_(&m), view_(view) {
  if (view_) {
    NodeId b = view_->boundary();
    upsampler_ = make_upsampler(m, m.graph.node(b).shape, upsampler_seed);
  }
}

Shape AttackTarget::input_shape() const {
  return model_->graph.node(model_->graph.input_node()).shape;
}

int AttackTarget::predict(const Tensor& x) {
  model_->graph.set_target(0);
  forward(model_->graph, x, model_->params);
  const Tensor& logits = view_ ? view_->value(model_->graph, model_->logits)
                               : model_->graph.value(model_->logits);
  return argmax(logits);
}

double AttackTarget::loss(const Tensor& x, int y) {
  model_->graph.set_target(y);
  forward(model_->graph, x, model_->params);
  NodeId ln = model_->graph.loss_node();
  const Tensor& l =
      view_ ? view_->value(model_->graph, ln) : model_->graph.value(ln);
  return l[0];
}

Tensor AttackTarget::finish_gradient(NodeId from, const Tensor& seed) {
  if (view_) {
    Tensor delta = view_->boundary_adjoint(model_->graph, from, seed);
    return upsampler_->apply(delta);
  }
  BackwardResult res = backward_seeded(model_->graph, from, seed);
  return res.grad_wrt_input;
}

std::pair<double, Tensor> AttackTarget::loss_and_grad(const Tensor& x, int y) {
  ++queries;
  double l = loss(x, y);
  NodeId ln = model_->graph.loss_node();
  Tensor g = finish_gradient(ln, Tensor(model_->graph.node(ln).shape, 1.0));
  return {l, g};
}

AttackTarget::MarginInfo AttackTarget::margin_and_grad(const Tensor& x, int y) {
  ++queries;
  model_->graph.set_target(y);
  forward(model_->graph, x, model_->params);
  const Tensor& logits = view_ ? view_->value(model_->graph, model_->logits)
                               : model_->graph.value(model_->logits);
  int best_other = -1;
  for (int j = 0; j < logits.dim(0); ++j) {
    if (j == y) continue;
    if (best_other < 0 || logits[j] > logits[best_other]) best_other = j;
  }
  MarginInfo info;
  info.margin = logits[y] - logits[best_other];
  info.pred = argmax(logits);
  Tensor seed(logits.shape(), 0.0);
  seed[y] = 1.0;
  seed[best_other] = -1.0;
  info.grad = finish_gradient(model_->logits, seed);
  return info;
}

AttentionTrace AttackTarget::attention_trace() const {
  if (model_->attn_heads.empty()) throw Error("model exposes no attention trace");
  if (!view_) return pelta::attention_trace(model_->graph, model_->attn_heads);
  AttentionTrace trace;
  for (const auto& blk : model_->attn_heads) {
    std::vector<Tensor> row;
    for (NodeId id : blk) row.push_back(view_->attention_weights(model_->graph, id));
    trace.push_back(std::move(row));
  }
  return trace;
}

Tensor input_gradient(AttackTarget& target, const Tensor& x, int y) {
  return target.loss_and_grad(x, y).second;
}

namespace {

Tensor project(const Tensor& x, const Tensor& x0, const AttackConfig& cfg) {
  return clamp(clamp_ball(x, x0, cfg.epsilon), cfg.clip_min, cfg.clip_max);
}

Tensor random_start_point(const Tensor& x0, const AttackConfig& cfg, Rng& rng) {
  Tensor x = x0;
  for (int64_t i = 0; i < x.size(); ++i) x[i] += rng.uniform(-cfg.epsilon, cfg.epsilon);
  return clamp(x, cfg.clip_min, cfg.clip_max);
}

void record(AdvResult& r, const AttackConfig& cfg, int step, double loss, const Tensor& x,
            const Tensor& x0) {
  if (cfg.record_trajectory) r.trajectory.push_back({step, loss, linf_dist(x, x0)});
}

}  // namespace

AdvResult fgsm(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  (void)rng;
  long q0 = t.queries;
  AdvResult r;
  auto [l0, g] = t.loss_and_grad(x0, y);
  record(r, cfg, 0, l0, x0, x0);
  Tensor step = sign(g);
  Tensor x = x0;
  for (int64_t i = 0; i < x.size(); ++i) x[i] += cfg.epsilon * step[i];
  x = clamp(x, cfg.clip_min, cfg.clip_max);
  record(r, cfg, 1, t.loss(x, y), x, x0);
  r.x_adv = x;
  r.success = t.predict(x) != y;
  r.queries_used = t.queries - q0;
  return r;
}

AdvResult pgd(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  long q0 = t.queries;
  AdvResult r;
  Tensor x = cfg.random_start ? project(random_start_point(x0, cfg, rng), x0, cfg) : x0;
  for (int i = 1; i <= cfg.steps; ++i) {
    auto [l, g] = t.loss_and_grad(x, y);
    if (i == 1) record(r, cfg, 0, l, x, x0);
    Tensor s = sign(g);
    for (int64_t j = 0; j < x.size(); ++j) x[j] += cfg.epsilon_step * s[j];
    x = project(x, x0, cfg);
    record(r, cfg, i, t.loss(x, y), x, x0);
  }
  r.x_adv = x;
  r.success = t.predict(x) != y;
  r.queries_used = t.queries - q0;
  return r;
}

AdvResult mim(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  long q0 = t.queries;
  AdvResult r;
  Tensor x = cfg.random_start ? project(random_start_point(x0, cfg, rng), x0, cfg) : x0;
  Tensor acc(x.shape(), 0.0);
  for (int i = 1; i <= cfg.steps; ++i) {
    auto [l, g] = t.loss_and_grad(x, y);
    if (i == 1) record(r, cfg, 0, l, x, x0);
    // velocity: acc <- mu * acc + g / ||g||_1
    double n = l1_norm(g);
    for (int64_t j = 0; j < acc.size(); ++j)
      acc[j] = cfg.mu * acc[j] + (n > 0.0 ? g[j] / n : g[j]);
    Tensor s = sign(acc);
    for (int64_t j = 0; j < x.size(); ++j) x[j] += cfg.epsilon_step * s[j];
    x = project(x, x0, cfg);
    record(r, cfg, i, t.loss(x, y), x, x0);
  }
  r.x_adv = x;
  r.success = t.predict(x) != y;
  r.queries_used = t.queries - q0;
  return r;
}

namespace {

// checkpoint schedule p_0 = 0, p_1 = 0.22, p_{j+1} = p_j + max(p_j - p_{j-1}
// - 0.03, 0.06), scaled to the iteration count
std::vector<int> apgd_checkpoints(int n) {
  std::vector<double> p{0.0, 0.22};
  while (p.back() < 1.0) p.push_back(p.back() + std::max(p.back() - p[p.size() - 2] - 0.03, 0.06));
  std::vector<int> w;
  for (double v : p) w.push_back(static_cast<int>(std::ceil(v * n)));
  w.erase(std::unique(w.begin(), w.end()), w.end());
  return w;
}

}  // namespace

bool apgd_should_halve(int rises, int window, double rho, double eta, double cp_eta,
                       double best_f, double cp_best_f) {
  bool few_rises = rises < rho * window;
  bool stalled = (eta == cp_eta) && (best_f == cp_best_f);
  return few_rises || stalled;
}

AdvResult apgd(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  long q0 = t.queries;
  AdvResult r;
  constexpr double kMomentum = 0.75;
  Tensor best_x = x0;
  double best_f = -1e300;
  long budget = cfg.query_budget;

  for (int restart = 0; restart < std::max(1, cfg.n_restarts); ++restart) {
    long used = t.queries - q0;
    if (used >= budget) break;
    int n = static_cast<int>(std::min<long>(cfg.steps, budget - used));
    if (n < 1) break;
    std::vector<int> cps = apgd_checkpoints(n);
    size_t next_cp = 1;  // cps[0] == 0

    Tensor x = (restart == 0 && !cfg.random_start) ? x0
                                                   : project(random_start_point(x0, cfg, rng),
                                                             x0, cfg);
    auto [f, g] = t.loss_and_grad(x, y);
    if (restart == 0) record(r, cfg, 0, f, x, x0);
    Tensor x_prev = x;
    Tensor run_best_x = x;
    double run_best_f = f;
    double eta = 2.0 * cfg.epsilon;
    int rises = 0;
    double cp_eta = eta, cp_best_f = run_best_f;

    for (int k = 1; k < n && (t.queries - q0) < budget; ++k) {
      Tensor s = sign(g);
      Tensor z = x;
      for (int64_t j = 0; j < z.size(); ++j) z[j] += eta * s[j];
      z = project(z, x0, cfg);
      Tensor x_next;
      if (k == 1) {
        x_next = z;
      } else {
        x_next = x;
        for (int64_t j = 0; j < x_next.size(); ++j)
          x_next[j] = x[j] + kMomentum * (z[j] - x[j]) + (1.0 - kMomentum) * (x[j] - x_prev[j]);
        x_next = project(x_next, x0, cfg);
      }
      auto [f_next, g_next] = t.loss_and_grad(x_next, y);
      if (f_next > f) ++rises;
      if (f_next > run_best_f) {
        run_best_f = f_next;
        run_best_x = x_next;
      }
      record(r, cfg, k, f_next, x_next, x0);
      x_prev = x;
      x = x_next;
      f = f_next;
      g = g_next;

      if (next_cp < cps.size() && k == cps[next_cp]) {
        int window = cps[next_cp] - cps[next_cp - 1];
        if (apgd_should_halve(rises, window, cfg.rho, eta, cp_eta, run_best_f, cp_best_f)) {
          eta *= 0.5;
          x = run_best_x;  // restart the search at the best point seen
          x_prev = x;
        }
        cp_eta = eta;
        cp_best_f = run_best_f;
        rises = 0;
        ++next_cp;
      }
    }
    if (run_best_f > best_f) {
      best_f = run_best_f;
      best_x = run_best_x;
    }
  }
  r.x_adv = best_x;
  r.success = t.predict(best_x) != y;
  r.queries_used = t.queries - q0;
  return r;
}

AdvResult cw(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  (void)rng;
  if (cfg.clip_min != 0.0 || cfg.clip_max != 1.0)
    throw ConfigError("the tanh substitution assumes a [0,1] clip range");
  long q0 = t.queries;
  AdvResult r;
  double kappa = cfg.confidence;
  // w-space start at (a clamped copy of) x0
  Tensor w(x0.shape());
  for (int64_t i = 0; i < w.size(); ++i) {
    double v = std::min(std::max(x0[i], 1e-6), 1.0 - 1e-6);
    w[i] = std::atanh(2.0 * v - 1.0);
  }
  Tensor best_x = x0;
  double best_obj = 1e300;       // among misclassified iterates
  Tensor fallback_x = x0;
  double fallback_obj = 1e300;   // among all iterates
  bool found = false;
  for (int step = 1; step <= cfg.steps; ++step) {
    Tensor x(w.shape());
    for (int64_t i = 0; i < x.size(); ++i) x[i] = (std::tanh(w[i]) + 1.0) * 0.5;
    auto info = t.margin_and_grad(x, y);
    double dist2 = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) dist2 += (x[i] - x0[i]) * (x[i] - x0[i]);
    double obj = dist2 + cfg.cw_c * std::max(info.margin, -kappa);
    record(r, cfg, step - 1, obj, x, x0);
    if (info.pred != y && obj < best_obj) {
      best_obj = obj;
      best_x = x;
      found = true;
    }
    if (obj < fallback_obj) {
      fallback_obj = obj;
      fallback_x = x;
    }
    // d obj / d w through the tanh substitution
    for (int64_t i = 0; i < w.size(); ++i) {
      double dx = 2.0 * (x[i] - x0[i]);
      if (info.margin > -kappa) dx += cfg.cw_c * info.grad[i];
      double th = std::tanh(w[i]);
      w[i] -= cfg.epsilon_step * dx * (1.0 - th * th) * 0.5;
    }
  }
  r.x_adv = found ? best_x : fallback_x;
  r.success = found;
  r.queries_used = t.queries - q0;
  return r;
}

AdvResult random_uniform_attack(AttackTarget& t, const Tensor& x0, int y,
                                const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!(cfg.epsilon > 0)) throw ConfigError("random perturbation wants epsilon > 0");
  long q0 = t.queries;
  AdvResult r;
  Tensor x = random_start_point(x0, cfg, rng);
  record(r, cfg, 0, t.loss(x, y), x, x0);
  r.x_adv = x;
  r.success = t.predict(x) != y;
  r.queries_used = t.queries - q0;
  return r;
}

AdvResult saga(EnsembleTarget& e, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  (void)rng;
  long q0 = e.cnn->queries + e.vit->queries;
  AdvResult r;
  const Model& vit_model = e.vit->model();
  int patch = vit_model.patch;
  Shape in_shape = e.vit->input_shape();
  int image = in_shape[1], channels = in_shape[0];
  Tensor x = x0;
  for (int i = 1; i <= cfg.steps; ++i) {
    auto [lk, gk] = e.cnn->loss_and_grad(x, y);
    auto [lv, gv] = e.vit->loss_and_grad(x, y);
    // self-attention map factor from the current iterate's pass
    Tensor rollout = attention_rollout(e.vit->attention_trace());
    Tensor phi = mul(rollout_to_image(rollout, patch, image, channels), x);
    Tensor blend(x.shape());
    for (int64_t j = 0; j < blend.size(); ++j)
      blend[j] = cfg.alpha_k * gk[j] + cfg.alpha_v() * phi[j] * gv[j];
    if (i == 1) record(r, cfg, 0, cfg.alpha_k * lk + cfg.alpha_v() * lv, x, x0);
    Tensor s = sign(blend);
    for (int64_t j = 0; j < x.size(); ++j) x[j] += cfg.epsilon_step * s[j];
    x = project(x, x0, cfg);
    double lk2 = e.cnn->loss(x, y), lv2 = e.vit->loss(x, y);
    record(r, cfg, i, cfg.alpha_k * lk2 + cfg.alpha_v() * lv2, x, x0);
  }
  r.x_adv = x;
  int pred = e.coined_member == 0 ? e.cnn->predict(x) : e.vit->predict(x);
  r.success = pred != y;
  r.queries_used = (e.cnn->queries + e.vit->queries) - q0;
  return r;
}

AdvResult run_attack(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg,
                     Rng& rng) {
  switch (cfg.kind) {
    case AttackKind::fgsm:
      return fgsm(t, x0, y, cfg, rng);
    case AttackKind::pgd:
      return pgd(t, x0, y, cfg, rng);
    case AttackKind::mim:
      return mim(t, x0, y, cfg, rng);
    case AttackKind::apgd:
      return apgd(t, x0, y, cfg, rng);
    case AttackKind::cw:
      return cw(t, x0, y, cfg, rng);
    case AttackKind::random_uniform:
      return random_uniform_attack(t, x0, y, cfg, rng);
    case AttackKind::saga:
      throw ConfigError("the blend attack needs an ensemble target");
  }
  throw ConfigError("unhandled attack kind");
}

void write_trajectory_csv(const AdvResult& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open trajectory file: " + path);
  f << "step,loss,linf_dist\n";
  for (const TrajectoryPoint& p : r.trajectory)
    f << p.step << "," << format_double(p.loss) << "," << format_double(p.linf) << "\n";
}

}  // namespace pelta
