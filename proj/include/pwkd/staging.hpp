#pragma once

#include <string>
#include <vector>

#include "pwkd/tensor.hpp"

namespace pwkd {

enum class StageOrder { Ascending, Descending, Fixed };

// "rectangle"/"rectangular" and "triangular" name the same rise-and-fall
// window; both are accepted. "step" is the plain monotone schedule that
// ignores stage boundaries.
enum class LrForm { Triangular, Cosine, Linear, MultiStep, Step };

LrForm parse_lr_form(const std::string& s);
const char* lr_form_name(LrForm f);

StageOrder parse_stage_order(const std::string& s, double* fixed_rho);

struct LRSchedule {
  LrForm form = LrForm::Triangular;
  double lr_min = 1e-4;
  double lr_max = 0.1;
  // multi-step / step forms: decay factors applied at these cycle fractions
  std::vector<double> milestones = {0.5, 0.75};
  double decay = 0.1;

  void validate() const;
};

struct Stage {
  double rho;
  int epoch_begin;  // inclusive
  int epoch_end;    // exclusive
};

// Equal partition of the epoch budget over the widths, earlier stages taking
// the remainder, widths ordered per mode.
struct StagePlan {
  std::vector<Stage> stages;
  int total_epochs = 0;
  StageOrder order = StageOrder::Ascending;
};

StagePlan make_plan(int total_epochs, const std::vector<double>& width_list, StageOrder order,
                    double fixed_rho = 1.0);

// The unique stage containing epoch, plus the cycle-local offset.
std::pair<int, double> stage_for_epoch(const StagePlan& plan, double epoch);

// Learning rate at a (possibly fractional) epoch. Cyclical forms restart at
// every stage boundary; the step form decays monotonically over the whole
// budget.
double lr_at(const LRSchedule& schedule, const StagePlan& plan, double epoch);

}  // namespace pwkd
