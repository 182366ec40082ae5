#pragma once

#include <set>

#include "pelta/attacks.hpp"
#include "pelta/data.hpp"

namespace pelta {

struct FLRoundConfig {
  int n_clients = 2;
  int n_rounds = 3;
  int local_steps = 10;
  double learning_rate = 0.05;
  std::set<int> compromised_indices;
  AttackConfig attack;
  bool shield_enabled = false;
  int attack_samples = 50;
  uint64_t seed = 0;

  void validate() const;
};

struct FLAttackStats {
  int round = 0;
  int client = 0;
  int samples = 0;
  int successes = 0;
};

struct FLResult {
  std::vector<ParamMap> round_params;  // aggregated parameters after each round
  std::vector<FLAttackStats> node_attacks;
};

/// Round simulation: broadcast, local SGD on per-client shards, mean
/// aggregation. Compromised clients probe their own local copy after the last
/// local step of each round; the message flow itself is never altered.
FLResult run_fl_simulation(const Model& proto, const FLRoundConfig& cfg, const Dataset& ds);

}  // namespace pelta
