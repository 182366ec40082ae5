#include "pelta/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace pelta {

Dataset Dataset::slice(size_t from, size_t to) const {
  Dataset out;
  out.name = name;
  out.n_classes = n_classes;
  for (size_t i = from; i < to && i < size(); ++i) {
    out.images.push_back(images[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset gen_synthetic(int n, int size, int n_classes, uint64_t seed) {
  if (n < 1) throw DataError("dataset wants at least one sample");
  if (n_classes != 2) throw DataError("synthetic generator supports two classes");
  Dataset ds;
  ds.name = "synthetic";
  ds.n_classes = 2;
  Rng master(seed);
  double lo = size * 0.30, hi = size * 0.65;
  for (int i = 0; i < n; ++i) {
    Rng rng = master.child(static_cast<uint64_t>(i));
    int label = i % 2;  // exact class balance for even n
    double cy = label == 0 ? lo : hi;
    double cx = label == 0 ? lo : hi;
    cy += rng.uniform(-1.5, 1.5);
    cx += rng.uniform(-1.5, 1.5);
    double amp = rng.uniform(0.35, 0.55);
    double sigma = rng.uniform(1.6, 2.4);
    Tensor img({1, size, size});
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        double v = amp * std::exp(-d2 / (2.0 * sigma * sigma));
        v += 0.12 + rng.uniform(-0.10, 0.10);
        img.at(0, y, x) = std::min(std::max(v, 0.0), 1.0);
      }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

namespace {

constexpr size_t kRecordBytes = 3073;  // 1 label + 3 * 1024 pixels

void load_cifar10_file(const std::string& file, Dataset& ds) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw DataError("cannot open dataset file: " + file);
  f.seekg(0, std::ios::end);
  auto total = static_cast<size_t>(f.tellg());
  f.seekg(0, std::ios::beg);
  if (total % kRecordBytes != 0)
    throw DataError("truncated batch file (size " + std::to_string(total) +
                    " not a multiple of 3073): " + file);
  size_t records = total / kRecordBytes;
  std::vector<unsigned char> buf(kRecordBytes);
  for (size_t r = 0; r < records; ++r) {
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(kRecordBytes));
    if (!f) throw DataError("read failure in " + file);
    int label = buf[0];
    if (label >= 10)
      throw DataError("label " + std::to_string(label) + " out of range in " + file);
    Tensor img({3, 32, 32});
    for (int i = 0; i < 3072; ++i)
      img[i] = static_cast<double>(buf[static_cast<size_t>(i) + 1]) / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
}

}  // namespace

Dataset load_cifar10(const std::string& path) {
  Dataset ds;
  ds.name = "cifar10";
  ds.n_classes = 10;
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
    if (files.empty()) throw DataError("no .bin batches under " + path);
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) load_cifar10_file(f, ds);
  } else {
    load_cifar10_file(path, ds);
  }
  return ds;
}

void save_cifar10_batch(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open batch file for writing: " + path);
  for (size_t i = 0; i < ds.size(); ++i) {
    unsigned char label = static_cast<unsigned char>(ds.labels[i]);
    f.write(reinterpret_cast<char*>(&label), 1);
    const Tensor& img = ds.images[i];
    for (int64_t j = 0; j < img.size(); ++j) {
      auto byte = static_cast<unsigned char>(std::llround(img[j] * 255.0));
      f.write(reinterpret_cast<char*>(&byte), 1);
    }
  }
}

}  // namespace pelta
