#include "pwkd/train.hpp"

#include <chrono>

namespace pwkd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int correct_in_batch(const Tensor& logits, const std::vector<int>& y) {
  const int n = logits.dim(0), k = logits.dim(1);
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const float* row = &logits.at2(i, 0);
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (row[c] > row[best]) best = c;
    if (best == y[static_cast<size_t>(i)]) ++correct;
  }
  return correct;
}

}  // namespace

std::vector<MetricsRow> decompose_train(SlimmableNet& net, const Dataset& ds,
                                        const DecomposeConfig& cfg, const LoopOptions& opt,
                                        Sgd& optimizer) {
  cfg.validate();
  if (ds.train_size() == 0 || ds.test_size() == 0)
    throw ConfigError("decompose_train: dataset needs train and test splits");
  const int groups = net.group_count();
  const int steps = ds.train_size() / cfg.batch_size;
  // single stage spanning the budget; cyclical forms make one cycle of it
  StagePlan plan;
  std::vector<MetricsRow> rows;
  if (cfg.epochs > 0) plan = make_plan(cfg.epochs, {1.0}, StageOrder::Fixed, 1.0);

  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = permutation(ds.train_size(), derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    std::vector<double> loss_sum(static_cast<size_t>(groups), 0.0);
    std::vector<long> hits(static_cast<size_t>(groups), 0);
    std::vector<int> batch_hits;
    Rng aug_rng(derive_seed(cfg.seed, "augment", static_cast<uint64_t>(epoch)));
    double lr = lr_at(opt.lr, plan, epoch);
    for (int s = 0; s < steps; ++s) {
      if (opt.lr_per_iteration)
        lr = lr_at(opt.lr, plan, epoch + static_cast<double>(s) / steps);
      Tensor xb = take_batch(ds.train_x, order, s * cfg.batch_size, cfg.batch_size);
      if (opt.augment) augment_batch(xb, aug_rng);
      auto yb = take_labels(ds.train_y, order, s * cfg.batch_size, cfg.batch_size);
      auto losses = decompose_step(net, xb, yb, cfg, optimizer, static_cast<float>(lr), &batch_hits);
      for (int g = 0; g < groups; ++g) {
        loss_sum[static_cast<size_t>(g)] += losses[static_cast<size_t>(g)];
        hits[static_cast<size_t>(g)] += batch_hits[static_cast<size_t>(g)];
      }
    }
    const long seen = static_cast<long>(steps) * cfg.batch_size;
    for (int g = 0; g < groups; ++g) {
      MetricsRow row;
      row.epoch = epoch;
      row.stage_index = g;
      row.rho = net.widths[static_cast<size_t>(g)];
      row.lr = lr_at(opt.lr, plan, epoch);
      row.train_loss = steps > 0 ? loss_sum[static_cast<size_t>(g)] / steps : 0.0;
      row.train_acc = seen > 0 ? static_cast<double>(hits[static_cast<size_t>(g)]) / static_cast<double>(seen) : 0.0;
      row.test_acc = evaluate(net, ds.test_x, ds.test_y, g, opt.eval_batch);
      row.wall_seconds = opt.wall_clock ? seconds_since(t0) : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<MetricsRow> distill_train(SlimmableNet& student, SlimmableNet& teacher,
                                      const Dataset& ds, const RunConfig& cfg,
                                      const LoopOptions& opt, Sgd& optimizer,
                                      const StepObserver& on_step) {
  cfg.distill.validate();
  if (student.group_count() != 1)
    throw ConfigError("distill_train: the student is an ordinary single-width network");
  if (ds.train_size() == 0 || ds.test_size() == 0)
    throw ConfigError("distill_train: dataset needs train and test splits");
  // tap compatibility up front, before any training happens
  if (cfg.distill.method != DistillMethod::Kd) {
    for (const auto& h : cfg.distill.hint_points) {
      auto has = [&](const ArchSpec& spec) {
        return std::find(spec.tap_points.begin(), spec.tap_points.end(), h) !=
               spec.tap_points.end();
      };
      if (!has(teacher.spec) || !has(student.spec))
        throw ConfigError("hint point '" + h + "' must be a tap point of both teacher and student");
    }
  }

  StagePlan plan = make_plan(cfg.epochs, teacher.widths, cfg.order, cfg.fixed_rho);
  const int steps = ds.train_size() / cfg.batch;
  auto params = collect_params(student);

  std::vector<MetricsRow> rows;
  RegressorSet regressors;
  std::vector<ParameterT<float>*> reg_params;
  int current_stage = -1;
  int current_rho_idx = -1;
  int global_step = 0;
  const auto t0 = Clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto [stage_idx, local] = stage_for_epoch(plan, epoch);
    (void)local;
    const double rho = plan.stages[static_cast<size_t>(stage_idx)].rho;
    const int rho_idx = teacher.width_index(rho);

    if (stage_idx != current_stage) {
      current_stage = stage_idx;
      if (cfg.reset_momentum_at_stage) optimizer.reset();
      // regressors adapt to the teacher's channel count, which changes only
      // when the stage width does; a fixed-width plan keeps its regressor
      if (cfg.distill.method == DistillMethod::Fitnet && cfg.distill.beta < 1.0f &&
          rho_idx != current_rho_idx) {
        std::map<std::string, int> student_ch, teacher_ch;
        const auto ssw = student.spec.stage_widths();
        const auto tsw = teacher.spec.stage_widths();
        for (const auto& h : cfg.distill.hint_points) {
          const int stage_no = h.back() - '1';  // tap points are stage1..3
          student_ch[h] = ssw[static_cast<size_t>(stage_no)];
          teacher_ch[h] = active_channels(tsw[static_cast<size_t>(stage_no)], rho);
        }
        regressors = RegressorSet::make(student_ch, teacher_ch, cfg.distill.hint_points,
                                        derive_seed(cfg.seed, "regressor", static_cast<uint64_t>(stage_idx)));
        for (auto* p : regressors.params()) optimizer.reset(p->name);
        reg_params = regressors.params();
      }
      current_rho_idx = rho_idx;
    }

    double lr = lr_at(opt.lr, plan, epoch);
    double loss_sum = 0.0;
    long hits = 0, seen = 0;
    Rng aug_rng(derive_seed(cfg.seed, "augment", static_cast<uint64_t>(epoch)));
    auto order = permutation(ds.train_size(), derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));

    for (int s = 0; s < steps; ++s) {
      if (opt.lr_per_iteration)
        lr = lr_at(opt.lr, plan, epoch + static_cast<double>(s) / steps);
      Tensor xb = take_batch(ds.train_x, order, s * cfg.batch, cfg.batch);
      if (opt.augment) augment_batch(xb, aug_rng);
      auto yb = take_labels(ds.train_y, order, s * cfg.batch, cfg.batch);

      Fragment frag;
      if (cfg.distill.beta < 1.0f)
        frag = fragment_at_width(teacher, xb, rho_idx, Mode::Eval);

      zero_grads(params);
      zero_grads(reg_params);
      GraphT<float> g;
      auto fw = forward_at_width(g, student, g.constant(xb), 0, Mode::Train);
      int loss = student_loss(g, fw.logits, fw.taps, frag, yb, cfg.distill,
                              reg_params.empty() ? nullptr : &regressors);
      const float lv = g.scalar(loss);
      g.backward(loss);

      std::vector<ParameterT<float>*> step_params = params;
      step_params.insert(step_params.end(), reg_params.begin(), reg_params.end());
      optimizer.step(step_params, static_cast<float>(lr), cfg.momentum, cfg.weight_decay);

      loss_sum += lv;
      hits += correct_in_batch(g.value(fw.logits), yb);
      seen += cfg.batch;
      if (on_step) on_step(global_step, lv);
      ++global_step;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.stage_index = stage_idx;
    row.rho = rho;
    row.lr = lr_at(opt.lr, plan, epoch);
    row.train_loss = steps > 0 ? loss_sum / steps : 0.0;
    row.train_acc = seen > 0 ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    row.test_acc = evaluate(student, ds.test_x, ds.test_y, 0, opt.eval_batch);
    row.wall_seconds = opt.wall_clock ? seconds_since(t0) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::pair<std::string, std::vector<MetricsRow>>> run_baselines(
    SlimmableNet& teacher, const Dataset& ds, const RunConfig& cfg, const LoopOptions& opt) {
  const LrForm cyclical =
      opt.lr.form == LrForm::Step ? LrForm::Triangular : opt.lr.form;

  struct Variant {
    const char* name;
    float beta;
    StageOrder order;
    LrForm form;
  };
  const Variant variants[] = {
      {"scratch", 1.0f, StageOrder::Fixed, LrForm::Step},
      {"clr_only", 1.0f, StageOrder::Fixed, cyclical},
      {"kd", cfg.distill.beta, StageOrder::Fixed, LrForm::Step},
      {"pwkd", cfg.distill.beta, StageOrder::Ascending, LrForm::Step},
      {"pwkd_clr", cfg.distill.beta, StageOrder::Ascending, cyclical},
  };

  std::vector<std::pair<std::string, std::vector<MetricsRow>>> out;
  for (const auto& v : variants) {
    RunConfig rc = cfg;
    rc.distill.beta = v.beta;
    rc.order = v.order;
    rc.fixed_rho = 1.0;
    LoopOptions lo = opt;
    lo.lr.form = v.form;
    auto student = build<float>(rc.student, {1.0}, derive_seed(rc.seed, "student-init"));
    Sgd optimizer;
    out.emplace_back(v.name, distill_train(student, teacher, ds, rc, lo, optimizer));
  }
  return out;
}

}  // namespace pwkd
