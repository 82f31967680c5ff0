#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pwkd/decompose.hpp"
#include "pwkd/rng.hpp"

using namespace pwkd;

namespace {

ArchSpec tiny_spec() {
  ArchSpec spec;
  spec.family = Family::PlainConvNet;
  spec.n = 1;
  spec.k = 1;
  spec.in_channels = 2;
  spec.in_h = spec.in_w = 8;
  spec.classes = 4;
  return spec;
}

template <typename T>
TensorT<T> random_batch(const ArchSpec& spec, int n, uint64_t seed) {
  Rng rng(seed);
  TensorT<T> x({n, spec.in_channels, spec.in_h, spec.in_w});
  for (auto& v : x.data) v = static_cast<T>(rng.normal());
  return x;
}

std::vector<int> random_labels(int n, int k, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> y(static_cast<size_t>(n));
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
  return y;
}

}  // namespace

TEST_CASE("accumulated gradients equal the sum of per-width isolated gradients") {
  const auto spec = tiny_spec();
  const std::vector<double> widths = {0.25, 0.5, 0.75, 1.0};
  auto x = random_batch<double>(spec, 4, 11);
  auto y = random_labels(4, spec.classes, 12);
  DecomposeConfigT<double> cfg;
  cfg.alpha = 0.5;
  cfg.teacher_temperature = 1.0;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;

  // accumulated run
  auto net = build<double>(spec, widths, 5);
  SgdT<double> opt;
  auto losses = decompose_step(net, x, y, cfg, opt, 0.1);
  CHECK(losses.size() == 4);
  auto accumulated = gradient_set(collect_params(net));

  // isolated oracle: each width's loss alone on a fresh identically-seeded net
  GradientSetT<double> summed;
  TensorT<double> target;
  {
    auto probe = build<double>(spec, widths, 5);
    GraphT<double> g;
    auto fw = forward_at_width(g, probe, g.constant(x), 3, Mode::Train);
    target = g.value(fw.logits);
  }
  for (int g_idx = 0; g_idx < 4; ++g_idx) {
    auto iso = build<double>(spec, widths, 5);
    auto params = collect_params(iso);
    zero_grads(params);
    GraphT<double> g;
    auto fw = forward_at_width(g, iso, g.constant(x), g_idx, Mode::Train);
    int loss = decompose_width_loss(g, fw.logits, y, cfg, g_idx == 3 ? nullptr : &target);
    CHECK(g.scalar(loss) == doctest::Approx(losses[static_cast<size_t>(g_idx)]).epsilon(1e-12));
    g.backward(loss);
    for (auto* p : params) {
      auto [it, fresh] = summed.emplace(p->name, p->grad);
      if (!fresh)
        for (size_t i = 0; i < p->grad.numel(); ++i) it->second.data[i] += p->grad.data[i];
    }
  }

  REQUIRE(summed.size() == accumulated.size());
  double max_diff = 0.0;
  for (const auto& [name, grad] : accumulated) {
    const auto& ref = summed.at(name);
    REQUIRE(ref.numel() == grad.numel());
    for (size_t i = 0; i < grad.numel(); ++i)
      max_diff = std::max(max_diff, std::abs(grad.data[i] - ref.data[i]));
  }
  CHECK(max_diff < 1e-6);
}

TEST_CASE("detached target: smaller-width KL sends no gradient to full-width-only params") {
  const auto spec = tiny_spec();
  const std::vector<double> widths = {0.25, 0.5, 1.0};
  auto net = build<double>(spec, widths, 9);
  auto x = random_batch<double>(spec, 4, 21);
  auto y = random_labels(4, spec.classes, 22);
  DecomposeConfigT<double> cfg;
  cfg.alpha = 0.0;  // pure KL for the smaller widths

  // target from the full-width forward, detached
  TensorT<double> target;
  {
    GraphT<double> g;
    auto fw = forward_at_width(g, net, g.constant(x), 2, Mode::Train);
    target = g.value(fw.logits);
  }
  auto params = collect_params(net);
  zero_grads(params);
  for (int g_idx = 0; g_idx < 2; ++g_idx) {
    GraphT<double> g;
    auto fw = forward_at_width(g, net, g.constant(x), g_idx, Mode::Train);
    g.backward(decompose_width_loss(g, fw.logits, y, cfg, &target));
  }
  // full-width-only parameters: its private BN and classifier
  double max_abs = 0.0;
  for_each_unit(net, [&](ConvUnitT<double>& u) {
    for (double v : u.bn[2].gamma.grad.data) max_abs = std::max(max_abs, std::abs(v));
    for (double v : u.bn[2].beta.grad.data) max_abs = std::max(max_abs, std::abs(v));
  });
  for (double v : net.cls_w[2].grad.data) max_abs = std::max(max_abs, std::abs(v));
  for (double v : net.cls_b[2].grad.data) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs < 1e-9);

  // the shared conv weights DO receive gradient from the smaller widths
  double shared = 0.0;
  for (double v : net.stem.w.grad.data) shared = std::max(shared, std::abs(v));
  CHECK(shared > 0.0);
}

TEST_CASE("zeroed parameters give identical logits and vanishing KL everywhere") {
  const auto spec = tiny_spec();
  const std::vector<double> widths = {0.5, 0.75, 1.0};
  auto net = build<double>(spec, widths, 14);
  for (auto* p : collect_params(net))
    if (p->name.find(".gamma") == std::string::npos)
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
  auto x = random_batch<double>(spec, 4, 31);
  auto y = random_labels(4, spec.classes, 32);
  DecomposeConfigT<double> cfg;
  cfg.alpha = 0.5;
  SgdT<double> opt;
  auto losses = decompose_step(net, x, y, cfg, opt, 1e-6);
  const double lnK = std::log(static_cast<double>(spec.classes));
  CHECK(losses[2] == doctest::Approx(lnK).epsilon(1e-9));        // full width: CE only
  CHECK(losses[0] == doctest::Approx(0.5 * lnK).epsilon(1e-9));  // alpha*CE, KL = 0
  CHECK(losses[1] == doctest::Approx(0.5 * lnK).epsilon(1e-9));
}

TEST_CASE("alpha = 1 reduces every width to plain CE training") {
  const auto spec = tiny_spec();
  const std::vector<double> widths = {0.5, 1.0};
  auto x = random_batch<double>(spec, 4, 41);
  auto y = random_labels(4, spec.classes, 42);
  DecomposeConfigT<double> cfg;
  cfg.alpha = 1.0;
  cfg.momentum = 0.0;

  auto net = build<double>(spec, widths, 3);
  SgdT<double> opt;
  auto losses = decompose_step(net, x, y, cfg, opt, 0.05);

  // isolated plain-CE gradients reproduce the same step exactly
  auto ref = build<double>(spec, widths, 3);
  auto params = collect_params(ref);
  zero_grads(params);
  for (int g_idx = 1; g_idx >= 0; --g_idx) {
    GraphT<double> g;
    auto fw = forward_at_width(g, ref, g.constant(x), g_idx, Mode::Train);
    int ce = g.cross_entropy(fw.logits, y);
    CHECK(g.scalar(ce) == doctest::Approx(losses[static_cast<size_t>(g_idx)]).epsilon(1e-12));
    g.backward(ce);
  }
  SgdT<double> opt2;
  opt2.step(params, 0.05, 0.0, 0.0);
  auto a = collect_params(net);
  auto b = collect_params(ref);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i]->value.numel(); ++j)
      CHECK(a[i]->value.data[j] == doctest::Approx(b[i]->value.data[j]).epsilon(1e-12));
}

TEST_CASE("decompose_step is deterministic") {
  const auto spec = tiny_spec();
  const std::vector<double> widths = {0.25, 0.5, 0.75, 1.0};
  auto x = random_batch<double>(spec, 4, 51);
  auto y = random_labels(4, spec.classes, 52);
  DecomposeConfigT<double> cfg;
  auto run = [&]() {
    auto net = build<double>(spec, widths, 77);
    SgdT<double> opt;
    auto l1 = decompose_step(net, x, y, cfg, opt, 0.1);
    auto l2 = decompose_step(net, x, y, cfg, opt, 0.1);
    l1.insert(l1.end(), l2.begin(), l2.end());
    return std::make_pair(l1, net.stem.w.value.data);
  };
  auto [la, wa] = run();
  auto [lb, wb] = run();
  CHECK(la == lb);
  CHECK(wa == wb);
}

TEST_CASE("decompose_step rejects degenerate setups") {
  const auto spec = tiny_spec();
  auto net1 = build<double>(spec, {1.0}, 1);
  auto x = random_batch<double>(spec, 4, 61);
  auto y = random_labels(4, spec.classes, 62);
  DecomposeConfigT<double> cfg;
  SgdT<double> opt;
  CHECK_THROWS_AS((void)decompose_step(net1, x, y, cfg, opt, 0.1), ConfigError);

  auto net2 = build<double>(spec, {0.5, 1.0}, 1);
  DecomposeConfigT<double> bad = cfg;
  bad.alpha = 1.5;
  CHECK_THROWS_AS((void)decompose_step(net2, x, y, bad, opt, 0.1), ConfigError);
}

TEST_CASE("evaluate: constant logits predict the lowest class index") {
  const auto spec = tiny_spec();
  auto net = build<float>(spec, {0.5, 1.0}, 8);
  // zero classifiers force identical logits; tie-break picks class 0
  for (auto& p : net.cls_w) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  for (auto& p : net.cls_b) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  const int n = 40;  // balanced labels 0..3
  auto x = random_batch<float>(spec, n, 71);
  std::vector<int> y(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = i % spec.classes;
  CHECK(evaluate(net, x, y, 1) == doctest::Approx(0.25));
  CHECK_THROWS_AS((void)evaluate(net, TensorT<float>(), y, 1), ConfigError);
}

TEST_CASE("evaluate matches the standalone extraction at full width") {
  const auto spec = tiny_spec();
  auto net = build<float>(spec, {0.5, 1.0}, 19);
  auto x = random_batch<float>(spec, 16, 81);
  auto y = random_labels(16, spec.classes, 82);
  auto alone = extract_standalone(net, 1.0);
  CHECK(evaluate(net, x, y, 1) == doctest::Approx(evaluate(alone, x, y, 0)));
  // reproducible bit-exactly
  CHECK(evaluate(net, x, y, 0) == evaluate(net, x, y, 0));
}
