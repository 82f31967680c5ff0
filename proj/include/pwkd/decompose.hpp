#pragma once

#include "pwkd/net.hpp"
#include "pwkd/sgd.hpp"

namespace pwkd {

template <typename T>
struct DecomposeConfigT {
  T alpha = T(0.5);
  T teacher_temperature = T(1);
  int epochs = 0;
  int batch_size = 64;
  T momentum = T(0.9);
  T weight_decay = T(0);
  uint64_t seed = 0;

  void validate() const {
    if (alpha < T(0) || alpha > T(1)) throw ConfigError("decompose alpha must lie in [0,1]");
    if (teacher_temperature <= T(0)) throw ConfigError("decompose temperature must be > 0");
    if (batch_size < 2) throw ConfigError("decompose batch size must be >= 2 (train-mode BN)");
  }
};
using DecomposeConfig = DecomposeConfigT<float>;

// Copies samples [begin, begin+count) of a shuffled index list into a batch.
template <typename T>
TensorT<T> take_batch(const TensorT<T>& xs, const std::vector<int>& order, int begin, int count) {
  const size_t sample = xs.numel() / static_cast<size_t>(xs.dim(0));
  std::vector<int> shape = xs.shape;
  shape[0] = count;
  TensorT<T> out(std::move(shape));
  for (int i = 0; i < count; ++i) {
    const int src = order[static_cast<size_t>(begin + i)];
    std::copy_n(xs.ptr() + static_cast<size_t>(src) * sample, sample,
                out.ptr() + static_cast<size_t>(i) * sample);
  }
  return out;
}

inline std::vector<int> take_labels(const std::vector<int>& ys, const std::vector<int>& order,
                                    int begin, int count) {
  std::vector<int> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<size_t>(i)] = ys[static_cast<size_t>(order[static_cast<size_t>(begin + i)])];
  return out;
}

// The per-width loss of the joint training step: plain CE for the full width,
// alpha*CE + (1-alpha)*KL(target) for the rest. The target is the detached
// full-width logits tensor.
template <typename T>
int decompose_width_loss(GraphT<T>& g, int logits, const std::vector<int>& y,
                         const DecomposeConfigT<T>& cfg, const TensorT<T>* target) {
  int ce = g.cross_entropy(logits, y);
  if (!target) return ce;
  int kl = g.kl_temperature(logits, *target, cfg.teacher_temperature);
  return g.add(g.scale(ce, cfg.alpha), g.scale(kl, T(1) - cfg.alpha));
}

// One joint update over all sub-networks. The full width runs first so its
// logits exist as the (detached) target; gradients from every width
// accumulate into the shared parameters; exactly one optimizer step follows.
// Returns the per-width losses indexed like the width list.
template <typename T>
std::vector<T> decompose_step(SlimmableNetT<T>& net, const TensorT<T>& x, const std::vector<int>& y,
                              const DecomposeConfigT<T>& cfg, SgdT<T>& opt, T lr,
                              std::vector<int>* hits_out = nullptr) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(0) < 1) throw ConfigError("decompose_step: empty batch");
  if (net.group_count() < 2) throw ConfigError("decompose_step: net must expose >= 2 widths");
  auto params = collect_params(net);
  zero_grads(params);

  const int full = net.group_count() - 1;
  std::vector<T> losses(static_cast<size_t>(net.group_count()));
  if (hits_out) hits_out->assign(static_cast<size_t>(net.group_count()), 0);
  TensorT<T> target;

  auto run_width = [&](int g_idx, const TensorT<T>* tgt) {
    try {
      GraphT<T> g;
      auto fw = forward_at_width(g, net, g.constant(x), g_idx, Mode::Train);
      if (!tgt) target = g.value(fw.logits);
      int loss = decompose_width_loss(g, fw.logits, y, cfg, tgt);
      const T lv = g.scalar(loss);
      if (!std::isfinite(static_cast<double>(lv)))
        throw NumericError("non-finite loss");
      g.backward(loss);
      losses[static_cast<size_t>(g_idx)] = lv;
      if (hits_out) {
        const auto& logits = g.value(fw.logits);
        const int k = logits.dim(1);
        int correct = 0;
        for (int i = 0; i < logits.dim(0); ++i) {
          const T* row = &logits.at2(i, 0);
          int best = 0;
          for (int c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;
          if (best == y[static_cast<size_t>(i)]) ++correct;
        }
        (*hits_out)[static_cast<size_t>(g_idx)] = correct;
      }
    } catch (const NumericError& e) {
      throw NumericError("decompose_step at width " +
                         std::to_string(net.widths[static_cast<size_t>(g_idx)]) + ": " + e.what());
    }
  };

  run_width(full, nullptr);
  for (int g_idx = full - 1; g_idx >= 0; --g_idx) run_width(g_idx, &target);

  opt.step(params, lr, cfg.momentum, cfg.weight_decay);
  return losses;
}

// Eval-mode top-1 accuracy at one width. Ties break to the lowest class
// index, so the result is deterministic.
template <typename T>
double evaluate(SlimmableNetT<T>& net, const TensorT<T>& xs, const std::vector<int>& ys, int g_idx,
                int batch = 256) {
  if (xs.rank() != 4 || xs.dim(0) == 0 || ys.empty())
    throw ConfigError("evaluate: empty split");
  const int n = xs.dim(0);
  if (static_cast<size_t>(n) != ys.size())
    throw ShapeError("evaluate: " + std::to_string(n) + " samples vs " +
                     std::to_string(ys.size()) + " labels");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  long correct = 0;
  for (int begin = 0; begin < n; begin += batch) {
    const int count = std::min(batch, n - begin);
    TensorT<T> xb = take_batch(xs, order, begin, count);
    auto frag = fragment_at_width(net, xb, g_idx, Mode::Eval);
    const int k = frag.logits.dim(1);
    for (int i = 0; i < count; ++i) {
      const T* row = &frag.logits.at2(i, 0);
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (row[c] > row[best]) best = c;
      if (best == ys[static_cast<size_t>(begin + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace pwkd
