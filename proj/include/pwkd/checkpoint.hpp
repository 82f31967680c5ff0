#pragma once

#include <optional>
#include <string>

#include "pwkd/net.hpp"
#include "pwkd/sgd.hpp"

namespace pwkd {

struct CheckpointMeta {
  ArchSpec spec;
  std::vector<double> widths;
  uint64_t seed = 0;
  int epoch = 0;
  std::string dataset;
  std::vector<float> norm_mean;
  std::vector<float> norm_std;
};

// Versioned little-endian binary: named float32 arrays (parameters, per-width
// BN running stats, optional optimizer velocity) plus a JSON metadata block.
// save -> load -> save round-trips byte-identically.
void save_checkpoint(const std::string& path, SlimmableNet& net, const CheckpointMeta& meta,
                     const Sgd* optimizer = nullptr);

struct LoadedCheckpoint {
  SlimmableNet net;
  CheckpointMeta meta;
  Sgd optimizer;  // velocity buffers when the file carries them
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace pwkd
