#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "pwkd/net.hpp"

using namespace pwkd;
using gradcheck::random_tensor;

// Every op gets checked against central finite differences on small random
// shapes. The acceptance suite reruns this at 50+ seeds; here a handful per
// op keeps the unit run fast.
namespace {
constexpr double kTol = 1e-4;
}  // namespace

TEST_CASE("conv2d gradients vs finite differences") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed * 31 + 1);
    const int N = 1 + static_cast<int>(rng.below(2));
    const int C = 1 + static_cast<int>(rng.below(4));
    const int O = 1 + static_cast<int>(rng.below(4));
    const int H = 2 + static_cast<int>(rng.below(3));
    const int K = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    if (H + 2 * pad < K) continue;
    ParameterT<double> x("x", random_tensor({N, C, H, H}, rng));
    ParameterT<double> w("w", random_tensor({O, C, K, K}, rng));
    ParameterT<double> b("b", random_tensor({O}, rng));
    TensorT<double> target;
    auto forward = [&](bool bw) {
      GraphT<double> g;
      int out = g.conv2d(g.param(&x), g.param(&w), g.param(&b), stride, pad);
      if (target.numel() == 0) target = random_tensor(g.value(out).shape, rng);
      int loss = g.mse(out, target);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep = gradcheck::check({&x, &w, &b}, [&] { return forward(false); },
                                [&] { forward(true); });
    CHECK(rep.max_rel < kTol);
  }
}

TEST_CASE("sliced conv2d gradients only touch the leading weight slice") {
  Rng rng(77);
  ParameterT<double> x("x", random_tensor({2, 3, 4, 4}, rng));
  ParameterT<double> w("w", random_tensor({6, 5, 3, 3}, rng));  // full 6 out, 5 in
  TensorT<double> target;
  const int active_out = 4;
  auto forward = [&](bool bw) {
    GraphT<double> g;
    int out = g.conv2d(g.param(&x), g.param(&w), std::nullopt, 1, 1, active_out);
    if (target.numel() == 0) target = random_tensor(g.value(out).shape, rng);
    int loss = g.mse(out, target);
    if (bw) g.backward(loss);
    return g.scalar(loss);
  };
  auto rep = gradcheck::check({&x, &w}, [&] { return forward(false); }, [&] { forward(true); });
  CHECK(rep.max_rel < kTol);
  // grads outside the active slice stay exactly zero
  forward(true);
  for (int o = 0; o < 6; ++o)
    for (int i = 0; i < 5; ++i)
      for (int a = 0; a < 3; ++a)
        for (int b2 = 0; b2 < 3; ++b2)
          if (o >= active_out || i >= 3)
            CHECK(w.grad.data[((static_cast<size_t>(o) * 5 + i) * 3 + a) * 3 + b2] == 0.0);
}

TEST_CASE("batchnorm2d gradients, train and eval") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      Rng rng(seed * 17 + 3);
      const int C = 1 + static_cast<int>(rng.below(4));
      ParameterT<double> x("x", random_tensor({2, C, 3, 3}, rng));
      BNStateT<double> st("bn", C);
      for (auto& v : st.gamma.value.data) v = 0.5 + rng.uniform();
      for (auto& v : st.beta.value.data) v = rng.normal();
      for (auto& v : st.running_mean.data) v = rng.normal();
      for (auto& v : st.running_var.data) v = 0.5 + rng.uniform();
      TensorT<double> target;
      auto forward = [&](bool bw) {
        GraphT<double> g;
        int out = g.batchnorm2d(g.param(&x), &st, mode);
        if (target.numel() == 0) target = random_tensor(g.value(out).shape, rng);
        int loss = g.mse(out, target);
        if (bw) g.backward(loss);
        return g.scalar(loss);
      };
      auto rep = gradcheck::check({&x, &st.gamma, &st.beta}, [&] { return forward(false); },
                                  [&] { forward(true); });
      CHECK(rep.max_rel < kTol);
    }
  }
}

TEST_CASE("relu, pool, linear, softmax gradients") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed * 13 + 5);
    ParameterT<double> x("x", random_tensor({2, 3, 4, 4}, rng));
    ParameterT<double> w("w", random_tensor({5, 3}, rng));
    ParameterT<double> b("b", random_tensor({5}, rng));
    const double temp = 0.5 + 3.0 * rng.uniform();
    TensorT<double> target;
    auto forward = [&](bool bw) {
      GraphT<double> g;
      int h = g.relu(g.param(&x));
      int pooled = g.global_avg_pool(h);
      int lin = g.linear(pooled, g.param(&w), g.param(&b));
      int sm = g.softmax(lin, temp);
      if (target.numel() == 0) target = random_tensor(g.value(sm).shape, rng);
      int loss = g.mse(sm, target);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep = gradcheck::check({&x, &w, &b}, [&] { return forward(false); }, [&] { forward(true); });
    CHECK(rep.max_rel < kTol);
  }
}

TEST_CASE("cross_entropy and kl_temperature gradients") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed * 19 + 7);
    const int N = 2 + static_cast<int>(rng.below(3));
    const int K = 2 + static_cast<int>(rng.below(6));
    ParameterT<double> z("z", random_tensor({N, K}, rng, 2.0));
    std::vector<int> labels;
    for (int i = 0; i < N; ++i) labels.push_back(static_cast<int>(rng.below(K)));
    auto fwd_ce = [&](bool bw) {
      GraphT<double> g;
      int loss = g.cross_entropy(g.param(&z), labels);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep = gradcheck::check({&z}, [&] { return fwd_ce(false); }, [&] { fwd_ce(true); });
    CHECK(rep.max_rel < kTol);

    TensorT<double> zt = random_tensor({N, K}, rng, 2.0);
    const double temp = 0.5 + 3.0 * rng.uniform();
    auto fwd_kl = [&](bool bw) {
      GraphT<double> g;
      int loss = g.kl_temperature(g.param(&z), zt, temp);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep2 = gradcheck::check({&z}, [&] { return fwd_kl(false); }, [&] { fwd_kl(true); });
    CHECK(rep2.max_rel < kTol);
  }
}

TEST_CASE("at/sp/mse/avg_pool gradients") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed * 23 + 11);
    ParameterT<double> f("f", random_tensor({2, 3, 4, 4}, rng));
    TensorT<double> tf = random_tensor({2, 5, 4, 4}, rng);  // channels differ for AT
    auto fwd_at = [&](bool bw) {
      GraphT<double> g;
      int loss = g.at_loss(g.param(&f), tf);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep = gradcheck::check({&f}, [&] { return fwd_at(false); }, [&] { fwd_at(true); });
    CHECK(rep.max_rel < kTol);

    TensorT<double> tsp = random_tensor({2, 7}, rng);
    auto fwd_sp = [&](bool bw) {
      GraphT<double> g;
      int loss = g.sp_loss(g.param(&f), tsp);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep2 = gradcheck::check({&f}, [&] { return fwd_sp(false); }, [&] { fwd_sp(true); });
    CHECK(rep2.max_rel < kTol);

    TensorT<double> target;
    auto fwd_pool = [&](bool bw) {
      GraphT<double> g;
      int out = g.avg_pool_to(g.param(&f), 2, 2);
      if (target.numel() == 0) target = random_tensor(g.value(out).shape, rng);
      int loss = g.mse(out, target);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep3 = gradcheck::check({&f}, [&] { return fwd_pool(false); }, [&] { fwd_pool(true); });
    CHECK(rep3.max_rel < kTol);
  }
}

TEST_CASE("composed conv-bn-relu-linear-CE graph matches finite differences") {
  for (uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed * 41 + 13);
    ParameterT<double> x("x", random_tensor({2, 2, 4, 4}, rng));
    ParameterT<double> w1("w1", random_tensor({4, 2, 3, 3}, rng, 0.5));
    BNStateT<double> st("bn", 4);
    ParameterT<double> w2("w2", random_tensor({3, 4}, rng, 0.5));
    ParameterT<double> b2("b2", random_tensor({3}, rng, 0.1));
    std::vector<int> labels = {0, 2};
    auto forward = [&](bool bw) {
      GraphT<double> g;
      int h = g.conv2d(g.param(&x), g.param(&w1), std::nullopt, 1, 1);
      h = g.batchnorm2d(h, &st, Mode::Train);
      h = g.relu(h);
      int pooled = g.global_avg_pool(h);
      int logits = g.linear(pooled, g.param(&w2), g.param(&b2));
      int loss = g.cross_entropy(logits, labels);
      if (bw) g.backward(loss);
      return g.scalar(loss);
    };
    auto rep = gradcheck::check({&x, &w1, &st.gamma, &st.beta, &w2, &b2},
                                [&] { return forward(false); }, [&] { forward(true); });
    CHECK(rep.max_rel < kTol);
  }
}

TEST_CASE("forward passes are bit-identical across runs") {
  ArchSpec spec;
  spec.family = Family::CifarResNet;
  spec.n = 1;
  spec.k = 1;
  spec.in_h = spec.in_w = 8;
  auto net1 = build<float>(spec, {0.5, 1.0}, 42);
  auto net2 = build<float>(spec, {0.5, 1.0}, 42);
  Rng rng(5);
  TensorT<float> x({2, 3, 8, 8});
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  for (int g_idx = 0; g_idx < 2; ++g_idx) {
    auto f1 = fragment_at_width(net1, x, g_idx, Mode::Eval);
    auto f2 = fragment_at_width(net2, x, g_idx, Mode::Eval);
    CHECK(f1.logits.data == f2.logits.data);
  }
}
