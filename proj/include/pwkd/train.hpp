#pragma once

#include <functional>

#include "pwkd/dataset.hpp"
#include "pwkd/decompose.hpp"
#include "pwkd/distill.hpp"
#include "pwkd/metrics.hpp"
#include "pwkd/staging.hpp"

namespace pwkd {

// Knobs shared by both training loops, all derived from the single seed.
struct LoopOptions {
  LRSchedule lr;
  bool lr_per_iteration = false;
  bool wall_clock = true;  // false pins the wall_seconds column to 0
  bool augment = false;
  int eval_batch = 256;
};

// Joint sub-network training (the teacher side). One epoch shuffles with a
// seed derived from (seed, epoch), drops the last partial batch, and runs
// decompose_step per batch. Metrics carry one row per (epoch, width).
std::vector<MetricsRow> decompose_train(SlimmableNet& net, const Dataset& ds,
                                        const DecomposeConfig& cfg, const LoopOptions& opt,
                                        Sgd& optimizer);

// Student-side multi-stage distillation.
struct RunConfig {
  ArchSpec student;
  DistillConfig distill;
  StageOrder order = StageOrder::Ascending;
  double fixed_rho = 1.0;
  int epochs = 0;
  int batch = 64;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  uint64_t seed = 0;
  bool reset_momentum_at_stage = false;
};

using StepObserver = std::function<void(int step, float loss)>;

// Walks the stage plan built from the teacher's width list, pulls the
// matching-width fragment from the frozen teacher each batch, trains the
// student with beta*CE + (1-beta)*method under the cyclical schedule.
std::vector<MetricsRow> distill_train(SlimmableNet& student, SlimmableNet& teacher,
                                      const Dataset& ds, const RunConfig& cfg,
                                      const LoopOptions& opt, Sgd& optimizer,
                                      const StepObserver& on_step = {});

// The five-run factor grid: scratch / CLR-only / vanilla distillation /
// staged distillation with monotone LR / staged + cyclical. All runs share
// the seed and data order, differing only in the factor under test.
std::vector<std::pair<std::string, std::vector<MetricsRow>>> run_baselines(
    SlimmableNet& teacher, const Dataset& ds, const RunConfig& cfg, const LoopOptions& opt);

}  // namespace pwkd
