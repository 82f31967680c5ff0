#include "pwkd/metrics.hpp"

#include <cstdio>
#include <fstream>

namespace pwkd {

namespace {

std::string fmt(double v, const char* spec = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::string out;
  out += std::to_string(r.epoch);
  out += ',';
  out += std::to_string(r.stage_index);
  out += ',';
  out += fmt(r.rho, "%g");
  out += ',';
  out += fmt(r.lr);
  out += ',';
  out += fmt(r.train_loss);
  out += ',';
  out += fmt(r.train_acc);
  out += ',';
  out += fmt(r.test_acc);
  out += ',';
  out += fmt(r.wall_seconds, "%.3f");
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << kMetricsHeader << '\n';
  for (const auto& r : rows) f << format_metrics_row(r) << '\n';
  if (!f) throw IoError("write failure on " + path);
}

void write_combined_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "run," << kMetricsHeader << '\n';
  for (const auto& [name, rows] : runs)
    for (const auto& r : rows) f << name << ',' << format_metrics_row(r) << '\n';
  if (!f) throw IoError("write failure on " + path);
}

std::string plan_csv(const StagePlan& plan, const LRSchedule& schedule) {
  std::string out = "epoch,stage_index,rho,lr\n";
  for (int e = 0; e < plan.total_epochs; ++e) {
    auto [idx, local] = stage_for_epoch(plan, e);
    (void)local;
    out += std::to_string(e);
    out += ',';
    out += std::to_string(idx);
    out += ',';
    out += fmt(plan.stages[static_cast<size_t>(idx)].rho, "%g");
    out += ',';
    out += fmt(lr_at(schedule, plan, e));
    out += '\n';
  }
  return out;
}

std::string plan_svg(const StagePlan& plan, const LRSchedule& schedule) {
  const int width = 720, height = 360;
  const int ml = 60, mr = 20, mt = 20, mb = 40;
  const double px = width - ml - mr, py = height - mt - mb;
  const int n = plan.total_epochs;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // stage bands
  for (size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& s = plan.stages[i];
    const double x0 = ml + px * s.epoch_begin / n;
    const double x1 = ml + px * s.epoch_end / n;
    svg += "<rect x=\"" + fmt(x0, "%.1f") + "\" y=\"" + std::to_string(mt) + "\" width=\"" +
           fmt(x1 - x0, "%.1f") + "\" height=\"" + fmt(py, "%.1f") + "\" fill=\"" +
           (i % 2 ? "#f4f4f4" : "#e9f0f7") + "\"/>\n";
    svg += "<text x=\"" + fmt((x0 + x1) / 2, "%.1f") + "\" y=\"" + std::to_string(mt + 14) +
           "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#555\">rho " + fmt(s.rho, "%g") +
           "</text>\n";
  }

  // lr polyline
  std::string pts;
  for (int e = 0; e < n; ++e) {
    const double lr = lr_at(schedule, plan, e);
    const double x = ml + px * (e + 0.5) / n;
    const double y = mt + py * (1.0 - (lr - schedule.lr_min) / (schedule.lr_max - schedule.lr_min));
    pts += fmt(x, "%.1f") + "," + fmt(y, "%.1f") + " ";
  }
  svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>\n";

  // axes and labels
  svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + fmt(mt + py, "%.1f") + "\" x2=\"" +
         fmt(ml + px, "%.1f") + "\" y2=\"" + fmt(mt + py, "%.1f") + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
         std::to_string(ml) + "\" y2=\"" + fmt(mt + py, "%.1f") + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + fmt(ml + px / 2, "%.1f") + "\" y=\"" + std::to_string(height - 10) +
         "\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n";
  svg += "<text x=\"12\" y=\"" + fmt(mt + py / 2, "%.1f") +
         "\" font-size=\"12\" transform=\"rotate(-90 12 " + fmt(mt + py / 2, "%.1f") +
         ")\" text-anchor=\"middle\">learning rate</text>\n";
  svg += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + std::to_string(mt + 6) +
         "\" font-size=\"10\" text-anchor=\"end\">" + fmt(schedule.lr_max, "%g") + "</text>\n";
  svg += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + fmt(mt + py, "%.1f") +
         "\" font-size=\"10\" text-anchor=\"end\">" + fmt(schedule.lr_min, "%g") + "</text>\n";
  svg += "<text x=\"" + std::to_string(ml) + "\" y=\"" + fmt(mt + py + 16, "%.1f") +
         "\" font-size=\"10\" text-anchor=\"middle\">0</text>\n";
  svg += "<text x=\"" + fmt(ml + px, "%.1f") + "\" y=\"" + fmt(mt + py + 16, "%.1f") +
         "\" font-size=\"10\" text-anchor=\"middle\">" + std::to_string(n) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace pwkd
