#pragma once

#include <map>
#include <ostream>
#include <tuple>

#include "pelta/attacks.hpp"
#include "pelta/data.hpp"

namespace pelta {

/// One robust-accuracy cell per (model, attack, shield setting).
using EvalKey = std::tuple<std::string, std::string, std::string>;

struct EvalReport {
  double clean_accuracy = 0.0;
  std::map<EvalKey, double> cells;
  int sample_count = 0;
  uint64_t seed = 0;
  double runtime_s = 0.0;  // console only; serialized files stay byte-stable
  std::string footer;

  bool operator==(const EvalReport& o) const {
    return clean_accuracy == o.clean_accuracy && cells == o.cells &&
           sample_count == o.sample_count && seed == o.seed && footer == o.footer;
  }
};

/// Robust accuracy of one model against one attack over `n_samples`
/// clean-correct samples. When `shield` is true every gradient query routes
/// through the restricted view (substitute backward map included).
/// Samples run in parallel; per-sample streams derive from (seed, index).
double robust_accuracy(const Model& proto, bool shield, const AttackConfig& cfg,
                       const Dataset& ds, int n_samples, uint64_t seed,
                       std::shared_ptr<AccessLog> log = nullptr);

/// Tables-style sweep: every (model, attack, clear/shielded) cell plus a
/// "none" attack column (trivially 1.0 by protocol, still measured).
EvalReport evaluate(std::vector<Model>& models, const std::vector<AttackConfig>& attacks,
                    const std::vector<bool>& shield_configs, const Dataset& ds, int n_samples,
                    uint64_t seed);

/// Blend-attack sweep over the four ensemble settings {none, vit_only,
/// cnn_only, ensemble}, with clean and random-perturbation baselines.
EvalReport evaluate_ensemble(EnsembleModel& ens, const AttackConfig& saga_cfg,
                             const AttackConfig& random_cfg, const Dataset& ds, int n_samples,
                             uint64_t seed);

void emit_report(const EvalReport& report, const std::string& format, std::ostream& out);
void emit_report_file(const EvalReport& report, const std::string& format,
                      const std::string& path);
EvalReport report_from_json(const std::string& json_text);
EvalReport report_from_csv(const std::string& csv_text);

}  // namespace pelta
