#pragma once

#include <string>
#include <vector>

#include "pwkd/staging.hpp"

namespace pwkd {

struct MetricsRow {
  int epoch = 0;
  int stage_index = 0;
  double rho = 1.0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,stage_index,rho,lr,train_loss,train_acc,test_acc,wall_seconds";

std::string format_metrics_row(const MetricsRow& row);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// Baselines grid: same columns with a leading run label.
void write_combined_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs);

// plan CLI outputs: one row per epoch, plus an SVG line plot of lr vs epoch
std::string plan_csv(const StagePlan& plan, const LRSchedule& schedule);
std::string plan_svg(const StagePlan& plan, const LRSchedule& schedule);

}  // namespace pwkd
