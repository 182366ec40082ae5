#pragma once

#include "pelta/data.hpp"
#include "pelta/zoo.hpp"

namespace pelta {

struct TrainResult {
  double final_accuracy = 0.0;  // training-set accuracy after the last step
  std::vector<double> losses;
};

/// Plain SGD on the model loss, one sample per step, samples cycled in order
/// starting at `step_offset`. Shared by the trainer and the round simulator so
/// both walk identical update sequences.
void sgd_steps(Model& m, const Dataset& ds, int step_offset, int steps, double lr);

/// Reinitializes parameters from `seed`, then runs `steps` of SGD.
TrainResult train_toy(Model& m, const Dataset& ds, int steps, double lr, uint64_t seed);

double accuracy(Model& m, const Dataset& ds);

}  // namespace pelta
