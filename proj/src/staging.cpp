#include "pwkd/staging.hpp"

#include <algorithm>
#include <cmath>

#include "pwkd/net.hpp"

namespace pwkd {

LrForm parse_lr_form(const std::string& s) {
  if (s == "triangular" || s == "rectangle" || s == "rectangular") return LrForm::Triangular;
  if (s == "cosine") return LrForm::Cosine;
  if (s == "linear") return LrForm::Linear;
  if (s == "multistep" || s == "multi-step") return LrForm::MultiStep;
  if (s == "step" || s == "monotone") return LrForm::Step;
  throw ConfigError("unknown lr form '" + s +
                    "' (triangular|cosine|linear|multistep|step; rectangle = triangular)");
}

const char* lr_form_name(LrForm f) {
  switch (f) {
    case LrForm::Triangular: return "triangular";
    case LrForm::Cosine: return "cosine";
    case LrForm::Linear: return "linear";
    case LrForm::MultiStep: return "multistep";
    case LrForm::Step: return "step";
  }
  return "?";
}

StageOrder parse_stage_order(const std::string& s, double* fixed_rho) {
  if (s == "ascending") return StageOrder::Ascending;
  if (s == "descending") return StageOrder::Descending;
  if (s.rfind("fixed:", 0) == 0) {
    try {
      if (fixed_rho) *fixed_rho = std::stod(s.substr(6));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse width in stage order '" + s + "'");
    }
    return StageOrder::Fixed;
  }
  throw ConfigError("unknown stage order '" + s + "' (ascending|descending|fixed:<rho>)");
}

void LRSchedule::validate() const {
  if (lr_min <= 0.0 || lr_max <= 0.0 || lr_min >= lr_max)
    throw ConfigError("lr bounds must satisfy 0 < lr_min < lr_max");
  if (decay <= 0.0 || decay >= 1.0) throw ConfigError("lr decay factor must lie in (0,1)");
  for (double m : milestones)
    if (m <= 0.0 || m >= 1.0) throw ConfigError("lr milestones must lie in (0,1)");
}

StagePlan make_plan(int total_epochs, const std::vector<double>& width_list, StageOrder order,
                    double fixed_rho) {
  validate_widths(width_list);
  const int groups = static_cast<int>(width_list.size());
  if (total_epochs < groups)
    throw ConfigError("total epochs " + std::to_string(total_epochs) + " < " +
                      std::to_string(groups) + " knowledge groups");

  std::vector<double> rhos(width_list);
  if (order == StageOrder::Descending) {
    std::reverse(rhos.begin(), rhos.end());
  } else if (order == StageOrder::Fixed) {
    bool found = false;
    for (double w : width_list) found = found || std::abs(w - fixed_rho) < 1e-9;
    if (!found)
      throw ConfigError("fixed width " + std::to_string(fixed_rho) + " is not in the width list");
    std::fill(rhos.begin(), rhos.end(), fixed_rho);
  }

  StagePlan plan;
  plan.total_epochs = total_epochs;
  plan.order = order;
  const int base = total_epochs / groups;
  const int remainder = total_epochs % groups;
  int begin = 0;
  for (int g = 0; g < groups; ++g) {
    const int len = base + (g < remainder ? 1 : 0);
    plan.stages.push_back({rhos[static_cast<size_t>(g)], begin, begin + len});
    begin += len;
  }
  return plan;
}

std::pair<int, double> stage_for_epoch(const StagePlan& plan, double epoch) {
  if (epoch < 0.0 || epoch >= static_cast<double>(plan.total_epochs))
    throw ConfigError("epoch " + std::to_string(epoch) + " outside plan range [0," +
                      std::to_string(plan.total_epochs) + ")");
  for (size_t i = 0; i < plan.stages.size(); ++i) {
    const Stage& s = plan.stages[i];
    if (epoch < static_cast<double>(s.epoch_end))
      return {static_cast<int>(i), epoch - static_cast<double>(s.epoch_begin)};
  }
  return {static_cast<int>(plan.stages.size()) - 1,
          epoch - static_cast<double>(plan.stages.back().epoch_begin)};
}

double lr_at(const LRSchedule& schedule, const StagePlan& plan, double epoch) {
  schedule.validate();
  if (epoch < 0.0 || epoch >= static_cast<double>(plan.total_epochs))
    throw ConfigError("epoch " + std::to_string(epoch) + " outside plan range [0," +
                      std::to_string(plan.total_epochs) + ")");
  const double span = schedule.lr_max - schedule.lr_min;

  if (schedule.form == LrForm::Step) {
    const double t = epoch / static_cast<double>(plan.total_epochs);
    double lr = schedule.lr_max;
    for (double m : schedule.milestones)
      if (t >= m) lr *= schedule.decay;
    return std::max(lr, schedule.lr_min);
  }

  auto [idx, local] = stage_for_epoch(plan, epoch);
  const Stage& s = plan.stages[static_cast<size_t>(idx)];
  const double cycle = static_cast<double>(s.epoch_end - s.epoch_begin);

  switch (schedule.form) {
    case LrForm::Triangular:
      return schedule.lr_min + span * (1.0 - std::abs(2.0 * local / cycle - 1.0));
    case LrForm::Cosine:
      return schedule.lr_min + span * (1.0 + std::cos(M_PI * local / cycle)) / 2.0;
    case LrForm::Linear:
      return schedule.lr_max - span * local / cycle;
    case LrForm::MultiStep: {
      double lr = schedule.lr_max;
      for (double m : schedule.milestones)
        if (local / cycle >= m) lr *= schedule.decay;
      return std::max(lr, schedule.lr_min);
    }
    default: return schedule.lr_max;
  }
}

}  // namespace pwkd
