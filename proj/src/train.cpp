#include "pelta/train.hpp"

namespace pelta {

void sgd_steps(Model& m, const Dataset& ds, int step_offset, int steps, double lr) {
  if (ds.size() == 0) throw DataError("training set is empty");
  int n = static_cast<int>(ds.size());
  for (int s = 0; s < steps; ++s) {
    int idx = (step_offset + s) % n;
    m.graph.set_target(ds.labels[static_cast<size_t>(idx)]);
    try {
      forward(m.graph, ds.images[static_cast<size_t>(idx)], m.params);
    } catch (const NumericError& e) {
      throw NumericError(std::string("training diverged: ") + e.what());
    }
    if (lr == 0.0) continue;
    BackwardResult bw = backward(m.graph, m.graph.loss_node());
    for (NodeId p : m.graph.parameter_nodes()) {
      if (m.graph.node(p).attr_int("trainable", 1) == 0) continue;
      auto it = bw.adjoints.find(p);
      if (it == bw.adjoints.end()) continue;  // parameter off the loss path
      Tensor& t = m.params.at(p);
      const Tensor& g = it->second;
      for (int64_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
    }
  }
}

TrainResult train_toy(Model& m, const Dataset& ds, int steps, double lr, uint64_t seed) {
  m.params = init_params(m.graph, seed);
  TrainResult res;
  int n = static_cast<int>(ds.size());
  // record the loss sparsely; dense logging would dominate small runs
  int log_every = std::max(1, steps / 50);
  for (int s = 0; s < steps; ++s) {
    sgd_steps(m, ds, s, 1, lr);
    if (s % log_every == 0) {
      int idx = s % n;
      m.graph.set_target(ds.labels[static_cast<size_t>(idx)]);
      forward(m.graph, ds.images[static_cast<size_t>(idx)], m.params);
      res.losses.push_back(m.graph.value(m.graph.loss_node())[0]);
    }
  }
  res.final_accuracy = accuracy(m, ds);
  return res;
}

double accuracy(Model& m, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  int correct = 0;
  for (size_t i = 0; i < ds.size(); ++i)
    if (predict(m, ds.images[i]) == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace pelta
