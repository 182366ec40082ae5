#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pelta/shield.hpp"
#include "pelta/zoo.hpp"

namespace pelta {

enum class AttackKind { fgsm, pgd, mim, apgd, cw, saga, random_uniform };
const char* attack_kind_name(AttackKind k);
AttackKind attack_kind_from(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 0.031;
  double epsilon_step = 0.00155;
  int steps = 20;
  double mu = 1.0;          // momentum decay
  double rho = 0.75;        // step-halving threshold
  int n_restarts = 1;
  long query_budget = 5000;
  double confidence = 50.0;  // hinge margin kappa
  double cw_c = 1.0;         // trade-off constant
  double alpha_k = 0.5;      // blend weight of the cnn member
  std::string norm = "linf";
  bool random_start = false;
  double clip_min = 0.0, clip_max = 1.0;
  bool record_trajectory = true;

  double alpha_v() const { return 1.0 - alpha_k; }
  void validate() const;
};

struct TrajectoryPoint {
  int step;
  double loss;
  double linf;
};

struct AdvResult {
  Tensor x_adv;
  bool success = false;
  long queries_used = 0;
  std::vector<TrajectoryPoint> trajectory;
};

enum class GradMode { full_whitebox, shielded_bpda };

/// Substitute backward map for the shielded stem: a transposed convolution (or
/// a dense map for flat stems) with a random-uniform kernel drawn once per
/// attack run.
struct Upsampler {
  UpsampleKind kind = UpsampleKind::dense;
  Tensor kernel;
  int stride = 1, pad = 0, patch = 0;
  Shape delta_grid;  // feature-map layout of the boundary adjoint
  Shape out_shape;
  Tensor apply(const Tensor& delta) const;
};

/// One model as seen by the attacker: clear (full gradients) or shielded
/// (boundary adjoint + upsampling only). Counts gradient queries.
class AttackTarget {
 public:
  AttackTarget(Model& m, const AttackerView* view, uint64_t upsampler_seed);

  GradMode mode() const {
    return view_ ? GradMode::shielded_bpda : GradMode::full_whitebox;
  }
  const Model& model() const { return *model_; }
  Shape input_shape() const;

  int predict(const Tensor& x);
  double loss(const Tensor& x, int y);
  /// (loss, d loss / d x); one gradient query
  std::pair<double, Tensor> loss_and_grad(const Tensor& x, int y);

  struct MarginInfo {
    double margin;  // Z_y - max_{j != y} Z_j
    Tensor grad;    // d margin / d x
    int pred;
  };
  /// gradient of the logit margin; one gradient query
  MarginInfo margin_and_grad(const Tensor& x, int y);

  /// row-stochastic attention maps from the most recent pass
  AttentionTrace attention_trace() const;

  long queries = 0;

 private:
  Tensor finish_gradient(NodeId from, const Tensor& seed);
  Model* model_;
  const AttackerView* view_;
  std::optional<Upsampler> upsampler_;
};

Upsampler make_upsampler(const Model& m, const Shape& delta_shape, uint64_t seed);

/// full mode: exact backward gradient; shielded mode: upsampled boundary
/// adjoint
Tensor input_gradient(AttackTarget& target, const Tensor& x, int y);

/// Step-halving test evaluated at checkpoints: halve when the fraction of
/// loss-increasing steps in the window fell below rho, or when both the step
/// size and the best loss are unchanged since the previous checkpoint.
bool apgd_should_halve(int rises, int window, double rho, double eta, double cp_eta,
                       double best_f, double cp_best_f);

AdvResult fgsm(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);
AdvResult pgd(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);
AdvResult mim(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);
AdvResult apgd(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);
AdvResult cw(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);
AdvResult random_uniform_attack(AttackTarget& t, const Tensor& x0, int y,
                                const AttackConfig& cfg, Rng& rng);

/// Two-member blend target. `coined_member` (0 = cnn, 1 = vit) decides which
/// member grades success, mirroring per-sample random selection.
struct EnsembleTarget {
  AttackTarget* cnn;
  AttackTarget* vit;
  int coined_member = 0;
};
AdvResult saga(EnsembleTarget& e, const Tensor& x0, int y, const AttackConfig& cfg, Rng& rng);

AdvResult run_attack(AttackTarget& t, const Tensor& x0, int y, const AttackConfig& cfg,
                     Rng& rng);

void write_trajectory_csv(const AdvResult& r, const std::string& path);

}  // namespace pelta
