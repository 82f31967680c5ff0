#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pwkd/rng.hpp"
#include "pwkd/staging.hpp"

using namespace pwkd;

namespace {
const std::vector<double> kWidths4 = {0.25, 0.5, 0.75, 1.0};
}

TEST_CASE("make_plan splits epochs equally, remainder to the front") {
  auto plan = make_plan(320, kWidths4, StageOrder::Ascending);
  REQUIRE(plan.stages.size() == 4);
  for (int g = 0; g < 4; ++g) {
    CHECK(plan.stages[static_cast<size_t>(g)].epoch_end -
              plan.stages[static_cast<size_t>(g)].epoch_begin ==
          80);
    CHECK(plan.stages[static_cast<size_t>(g)].rho == kWidths4[static_cast<size_t>(g)]);
  }

  auto plan10 = make_plan(10, kWidths4, StageOrder::Ascending);
  std::vector<int> lens;
  for (auto& s : plan10.stages) lens.push_back(s.epoch_end - s.epoch_begin);
  CHECK(lens == std::vector<int>{3, 3, 2, 2});

  auto desc = make_plan(10, kWidths4, StageOrder::Descending);
  CHECK(desc.stages[0].rho == 1.0);
  CHECK(desc.stages[3].rho == 0.25);
  std::vector<int> dlens;
  for (auto& s : desc.stages) dlens.push_back(s.epoch_end - s.epoch_begin);
  CHECK(dlens == lens);

  auto fixed = make_plan(10, kWidths4, StageOrder::Fixed, 1.0);
  for (auto& s : fixed.stages) CHECK(s.rho == 1.0);

  CHECK_THROWS_AS((void)make_plan(3, kWidths4, StageOrder::Ascending), ConfigError);
  CHECK_THROWS_AS((void)make_plan(10, kWidths4, StageOrder::Fixed, 0.33), ConfigError);
}

TEST_CASE("plan partitions the budget with no gaps or overlaps") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int total = 4 + static_cast<int>(rng.below(300));
    auto plan = make_plan(total, kWidths4, StageOrder::Ascending);
    int covered = 0;
    int prev_end = 0;
    for (auto& s : plan.stages) {
      CHECK(s.epoch_begin == prev_end);
      CHECK(s.epoch_end > s.epoch_begin);
      covered += s.epoch_end - s.epoch_begin;
      prev_end = s.epoch_end;
    }
    CHECK(covered == total);
    // lengths differ by at most one
    int mn = total, mx = 0;
    for (auto& s : plan.stages) {
      mn = std::min(mn, s.epoch_end - s.epoch_begin);
      mx = std::max(mx, s.epoch_end - s.epoch_begin);
    }
    CHECK(mx - mn <= 1);
    // stage_for_epoch total and consistent
    for (int e = 0; e < total; ++e) {
      auto [idx, local] = stage_for_epoch(plan, e);
      const Stage& s = plan.stages[static_cast<size_t>(idx)];
      CHECK(e >= s.epoch_begin);
      CHECK(e < s.epoch_end);
      CHECK(local == doctest::Approx(e - s.epoch_begin));
    }
  }
  auto plan = make_plan(320, kWidths4, StageOrder::Ascending);
  CHECK_THROWS_AS((void)stage_for_epoch(plan, -1.0), ConfigError);
  CHECK_THROWS_AS((void)stage_for_epoch(plan, 320.0), ConfigError);
}

TEST_CASE("stage_for_epoch interval lookup") {
  auto plan = make_plan(320, kWidths4, StageOrder::Ascending);
  auto [i200, l200] = stage_for_epoch(plan, 200.0);
  CHECK(plan.stages[static_cast<size_t>(i200)].rho == 0.75);
  CHECK(l200 == doctest::Approx(40.0));
  auto [i0, l0] = stage_for_epoch(plan, 0.0);
  CHECK(i0 == 0);
  CHECK(l0 == doctest::Approx(0.0));
  auto [ilast, llast] = stage_for_epoch(plan, 319.0);
  CHECK(ilast == 3);
  CHECK(llast == doctest::Approx(79.0));
}

TEST_CASE("triangular schedule matches the closed form") {
  LRSchedule sched;
  sched.form = LrForm::Triangular;
  sched.lr_min = 0.0001;
  sched.lr_max = 0.1;
  auto plan = make_plan(320, kWidths4, StageOrder::Ascending);
  CHECK(lr_at(sched, plan, 0.0) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at(sched, plan, 40.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(sched, plan, 20.0) == doctest::Approx(0.05005).epsilon(1e-12));
  // peaks at epoch 40 of each 80-epoch cycle: 40, 120, 200, 280
  for (int peak : {40, 120, 200, 280})
    CHECK(lr_at(sched, plan, peak) == doctest::Approx(0.1).epsilon(1e-12));
  // closed form at every integer epoch
  for (int e = 0; e < 320; ++e) {
    const int t = e % 80;
    const double expect = 0.0001 + (0.1 - 0.0001) * (1.0 - std::abs(2.0 * t / 80.0 - 1.0));
    CHECK(lr_at(sched, plan, e) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("cosine, linear and multistep forms") {
  auto plan = make_plan(320, kWidths4, StageOrder::Ascending);
  LRSchedule sched;
  sched.lr_min = 0.0001;
  sched.lr_max = 0.1;

  sched.form = LrForm::Cosine;
  CHECK(lr_at(sched, plan, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(sched, plan, 40.0) == doctest::Approx((0.1 + 0.0001) / 2).epsilon(1e-12));

  sched.form = LrForm::Linear;
  CHECK(lr_at(sched, plan, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(sched, plan, 40.0) == doctest::Approx(0.1 - (0.1 - 0.0001) * 0.5).epsilon(1e-12));

  sched.form = LrForm::MultiStep;
  CHECK(lr_at(sched, plan, 0.0) == doctest::Approx(0.1));
  CHECK(lr_at(sched, plan, 39.0) == doctest::Approx(0.1));
  CHECK(lr_at(sched, plan, 40.0) == doctest::Approx(0.01));
  CHECK(lr_at(sched, plan, 60.0) == doctest::Approx(0.001));
  CHECK(lr_at(sched, plan, 80.0) == doctest::Approx(0.1));  // cycle restart

  // monotone step form ignores stage boundaries
  sched.form = LrForm::Step;
  CHECK(lr_at(sched, plan, 0.0) == doctest::Approx(0.1));
  CHECK(lr_at(sched, plan, 159.0) == doctest::Approx(0.1));
  CHECK(lr_at(sched, plan, 160.0) == doctest::Approx(0.01));
  CHECK(lr_at(sched, plan, 240.0) == doctest::Approx(0.001));
}

TEST_CASE("every form restarts at stage boundaries and stays bounded") {
  auto plan = make_plan(170, kWidths4, StageOrder::Ascending);  // uneven stages
  for (LrForm form : {LrForm::Triangular, LrForm::Cosine, LrForm::Linear, LrForm::MultiStep}) {
    LRSchedule sched;
    sched.form = form;
    sched.lr_min = 0.001;
    sched.lr_max = 0.2;
    for (size_t k = 0; k + 1 < plan.stages.size(); ++k)
      CHECK(lr_at(sched, plan, plan.stages[k].epoch_begin) ==
            doctest::Approx(lr_at(sched, plan, plan.stages[k + 1].epoch_begin)).epsilon(1e-12));
    for (int e = 0; e < 170; ++e) {
      const double lr = lr_at(sched, plan, e);
      CHECK(lr >= 0.001 - 1e-15);
      CHECK(lr <= 0.2 + 1e-15);
    }
  }
}

TEST_CASE("triangular symmetry within a cycle") {
  auto plan = make_plan(80, {1.0}, StageOrder::Ascending);
  LRSchedule sched;
  sched.form = LrForm::Triangular;
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform() * 80.0;
    if (80.0 - t >= 80.0) continue;
    CHECK(lr_at(sched, plan, t) ==
          doctest::Approx(lr_at(sched, plan, 80.0 - t)).epsilon(1e-9));
  }
}

TEST_CASE("form parsing accepts the rectangle alias") {
  CHECK(parse_lr_form("triangular") == LrForm::Triangular);
  CHECK(parse_lr_form("rectangle") == LrForm::Triangular);
  CHECK(parse_lr_form("rectangular") == LrForm::Triangular);
  CHECK(parse_lr_form("cosine") == LrForm::Cosine);
  CHECK(parse_lr_form("multi-step") == LrForm::MultiStep);
  CHECK_THROWS_AS((void)parse_lr_form("sawtooth"), ConfigError);

  double rho = 0.0;
  CHECK(parse_stage_order("ascending", &rho) == StageOrder::Ascending);
  CHECK(parse_stage_order("fixed:0.5", &rho) == StageOrder::Fixed);
  CHECK(rho == 0.5);
  CHECK_THROWS_AS((void)parse_stage_order("sideways", &rho), ConfigError);
}
