#pragma once

#include <string>
#include <vector>

#include "pelta/rng.hpp"
#include "pelta/tensor.hpp"

namespace pelta {

struct Dataset {
  std::string name;
  std::vector<Tensor> images;  // values in [0,1]
  std::vector<int> labels;
  int n_classes = 2;

  size_t size() const { return images.size(); }
  Dataset slice(size_t from, size_t to) const;
};

/// Two-class blob images a toy model can learn quickly: each class has its
/// own bump location, plus position jitter and pixel noise.
Dataset gen_synthetic(int n, int size, int n_classes, uint64_t seed);

/// Standard binary batches: records of 1 label byte + 3072 channel-major
/// pixel bytes (32x32 RGB), pixels scaled to [0,1] by /255. `path` may be a
/// single .bin file or a directory of them.
Dataset load_cifar10(const std::string& path);

/// Inverse of load_cifar10 for one batch file (exact byte round-trip).
void save_cifar10_batch(const Dataset& ds, const std::string& path);

}  // namespace pelta
