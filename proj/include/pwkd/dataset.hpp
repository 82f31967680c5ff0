#pragma once

#include <string>

#include "pwkd/rng.hpp"
#include "pwkd/tensor.hpp"

namespace pwkd {

// Normalized image-classification dataset. Per-channel mean/std come from the
// (possibly subsetted) training split and are applied to both splits.
struct Dataset {
  std::string name;
  Tensor train_x;  // N,C,H,W
  std::vector<int> train_y;
  Tensor test_x;
  std::vector<int> test_y;
  std::vector<float> mean;
  std::vector<float> stdev;
  int classes = 10;

  int train_size() const { return train_x.rank() == 4 ? train_x.dim(0) : 0; }
  int test_size() const { return test_x.rank() == 4 ? test_x.dim(0) : 0; }
};

// IDX quartet (train/t10k, images/labels). subset > 0 keeps that many seeded
// training samples.
Dataset load_mnist(const std::string& dir, int subset = 0, uint64_t seed = 0);

// CIFAR-10 binary batches: data_batch_1..5.bin + test_batch.bin, 3073-byte
// records (label byte + 3*1024 pixels).
Dataset load_cifar10(const std::string& dir, int subset = 0, uint64_t seed = 0);

Dataset load_dataset(const std::string& name, const std::string& dir, int subset, uint64_t seed);

// Deterministic subset selection: first n entries of a seeded permutation.
std::vector<int> subset_indices(int total, int n, uint64_t seed);

// In-place horizontal flip (p=0.5) and 4-pixel pad-crop, one draw per sample.
void augment_batch(Tensor& batch, Rng& rng);

}  // namespace pwkd
