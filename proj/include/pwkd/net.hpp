#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "pwkd/graph.hpp"
#include "pwkd/rng.hpp"
#include "pwkd/tensor.hpp"

namespace pwkd {

enum class Family { CifarResNet, PlainConvNet };

inline const char* family_name(Family f) {
  return f == Family::CifarResNet ? "cifar-resnet" : "plain-convnet";
}
inline Family parse_family(const std::string& s) {
  if (s == "cifar-resnet") return Family::CifarResNet;
  if (s == "plain-convnet") return Family::PlainConvNet;
  throw ConfigError("unknown model family '" + s + "' (cifar-resnet | plain-convnet)");
}

// cifar-resnet: 6n+2 layers, 3 stages of n basic blocks, base widths 16/32/64
// times k, stride-2 at stage entry, projection shortcuts where shape changes.
// plain-convnet: stride-2 stem plus 3 stages of n conv-bn-relu blocks, base
// widths 4/8/16 times k. Both end in global average pooling and a classifier.
struct ArchSpec {
  Family family = Family::CifarResNet;
  int n = 1;
  int k = 1;
  int in_channels = 3;
  int in_h = 32;
  int in_w = 32;
  int classes = 10;
  std::vector<std::string> tap_points = {"stage1", "stage2", "stage3"};

  void validate() const {
    if (n < 1) throw ConfigError("arch: depth parameter n must be >= 1");
    if (k < 1) throw ConfigError("arch: width multiplier k must be >= 1");
    if (in_channels < 1 || in_h < 1 || in_w < 1) throw ConfigError("arch: bad input shape");
    if (classes < 2) throw ConfigError("arch: class count must be >= 2");
    for (const auto& t : tap_points)
      if (t != "stage1" && t != "stage2" && t != "stage3")
        throw ConfigError("arch: unknown tap point '" + t + "' (stage1|stage2|stage3)");
  }

  std::array<int, 3> stage_widths() const {
    const int base = family == Family::CifarResNet ? 16 : 4;
    return {base * k, 2 * base * k, 4 * base * k};
  }
};

// Leading-channel count for width scale rho. Ceiling rounding, so a positive
// scale never maps to zero channels. The epsilon keeps exact products like
// 0.75*64 from spilling to the next integer.
inline int active_channels(int full, double rho) {
  return static_cast<int>(std::ceil(rho * full - 1e-9));
}

inline void validate_widths(const std::vector<double>& widths) {
  if (widths.empty()) throw ConfigError("width list must not be empty");
  for (double w : widths)
    if (w <= 0.0 || w > 1.0) throw ConfigError("width scales must lie in (0,1]");
  for (size_t i = 1; i < widths.size(); ++i)
    if (widths[i] <= widths[i - 1]) throw ConfigError("width list must be strictly increasing");
  if (widths.back() != 1.0) throw ConfigError("width list must end with 1.0");
}

// One convolution with its per-width private batch-norm states.
template <typename T>
struct ConvUnitT {
  ParameterT<T> w;  // full-width O*I*K*K, shared across widths
  std::vector<BNStateT<T>> bn;
  int stride = 1;
  int pad = 1;
  int full_in = 0;
  int full_out = 0;
};

template <typename T>
struct BlockT {
  ConvUnitT<T> conv1;
  std::optional<ConvUnitT<T>> conv2;  // present for residual blocks
  std::optional<ConvUnitT<T>> proj;   // 1x1 projection shortcut
  bool residual = false;
};

// Produced by a width-conditioned forward pass: logits plus tapped features.
template <typename T>
struct FragmentT {
  double rho = 1.0;
  TensorT<T> logits;
  std::map<std::string, TensorT<T>> features;
};
using Fragment = FragmentT<float>;

// One shared parameter set exposing G sub-networks of scaled channel width,
// each with private BN states and a private classifier.
template <typename T>
struct SlimmableNetT {
  ArchSpec spec;
  std::vector<double> widths;
  uint64_t seed = 0;
  ConvUnitT<T> stem;
  std::vector<std::vector<BlockT<T>>> stages;
  std::vector<ParameterT<T>> cls_w;  // per width
  std::vector<ParameterT<T>> cls_b;

  int width_index(double rho) const {
    for (size_t g = 0; g < widths.size(); ++g)
      if (std::abs(widths[g] - rho) < 1e-9) return static_cast<int>(g);
    throw ConfigError("width scale " + std::to_string(rho) + " is not in the configured width list");
  }
  int group_count() const { return static_cast<int>(widths.size()); }
};
using SlimmableNet = SlimmableNetT<float>;

namespace detail {

template <typename T>
ConvUnitT<T> make_unit(const std::string& name, int in, int out, int kernel, int stride, int pad,
                       const std::vector<double>& widths, Rng& rng) {
  ConvUnitT<T> u;
  u.full_in = in;
  u.full_out = out;
  u.stride = stride;
  u.pad = pad;
  TensorT<double> w({out, in, kernel, kernel});
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(in) * kernel * kernel));
  for (auto& v : w.data) v = rng.normal() * std_dev;
  u.w = ParameterT<T>(name + ".w", w.template cast<T>(), /*decay=*/true);
  u.bn.reserve(widths.size());
  for (size_t g = 0; g < widths.size(); ++g) {
    const int ch = active_channels(out, widths[g]);
    u.bn.emplace_back(name + ".bn" + std::to_string(g), ch);
  }
  return u;
}

}  // namespace detail

// Builds the shared-weight network: one full-width parameter set, G private
// BN/classifier sets, deterministic init from the seed.
template <typename T>
SlimmableNetT<T> build(const ArchSpec& spec, const std::vector<double>& widths, uint64_t seed) {
  spec.validate();
  validate_widths(widths);
  SlimmableNetT<T> net;
  net.spec = spec;
  net.widths = widths;
  net.seed = seed;
  Rng rng(derive_seed(seed, "init"));

  const auto sw = spec.stage_widths();
  const bool resnet = spec.family == Family::CifarResNet;
  const int stem_stride = resnet ? 1 : 2;
  net.stem =
      detail::make_unit<T>("stem", spec.in_channels, sw[0], 3, stem_stride, 1, widths, rng);

  int in_ch = sw[0];
  net.stages.resize(3);
  for (int s = 0; s < 3; ++s) {
    const int out_ch = sw[static_cast<size_t>(s)];
    for (int b = 0; b < spec.n; ++b) {
      const std::string prefix = "s" + std::to_string(s + 1) + ".b" + std::to_string(b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      BlockT<T> blk;
      blk.residual = resnet;
      blk.conv1 = detail::make_unit<T>(prefix + ".c1", in_ch, out_ch, 3, stride, 1, widths, rng);
      if (resnet) {
        blk.conv2 = detail::make_unit<T>(prefix + ".c2", out_ch, out_ch, 3, 1, 1, widths, rng);
        if (stride != 1 || in_ch != out_ch)
          blk.proj = detail::make_unit<T>(prefix + ".proj", in_ch, out_ch, 1, stride, 0, widths, rng);
      }
      net.stages[static_cast<size_t>(s)].push_back(std::move(blk));
      in_ch = out_ch;
    }
  }

  const int last = sw[2];
  net.cls_w.reserve(widths.size());
  net.cls_b.reserve(widths.size());
  for (size_t g = 0; g < widths.size(); ++g) {
    const int feat = active_channels(last, widths[g]);
    TensorT<double> w({spec.classes, feat});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(feat));
    for (auto& v : w.data) v = rng.normal() * std_dev;
    net.cls_w.push_back(
        ParameterT<T>("cls" + std::to_string(g) + ".w", w.template cast<T>(), /*decay=*/true));
    net.cls_b.push_back(
        ParameterT<T>("cls" + std::to_string(g) + ".b", TensorT<T>({spec.classes}, T(0)), false));
  }
  return net;
}

// All trainable parameters: shared conv weights plus every width's private
// BN scale/shift and classifier.
template <typename T>
std::vector<ParameterT<T>*> collect_params(SlimmableNetT<T>& net) {
  std::vector<ParameterT<T>*> out;
  auto unit = [&out](ConvUnitT<T>& u) {
    out.push_back(&u.w);
    for (auto& bn : u.bn) {
      out.push_back(&bn.gamma);
      out.push_back(&bn.beta);
    }
  };
  unit(net.stem);
  for (auto& stage : net.stages)
    for (auto& blk : stage) {
      unit(blk.conv1);
      if (blk.conv2) unit(*blk.conv2);
      if (blk.proj) unit(*blk.proj);
    }
  for (auto& p : net.cls_w) out.push_back(&p);
  for (auto& p : net.cls_b) out.push_back(&p);
  return out;
}

// Structural walk over conv units in canonical order (for checkpointing).
template <typename T, typename Fn>
void for_each_unit(SlimmableNetT<T>& net, Fn&& fn) {
  fn(net.stem);
  for (auto& stage : net.stages)
    for (auto& blk : stage) {
      fn(blk.conv1);
      if (blk.conv2) fn(*blk.conv2);
      if (blk.proj) fn(*blk.proj);
    }
}

template <typename T>
struct ForwardResult {
  int logits = -1;  // graph node ids
  std::map<std::string, int> taps;
};

// Width-conditioned forward pass on a caller-supplied tape. Every conv reads
// the leading channel slices; BN state and classifier are the ones private to
// the width. Train mode updates only this width's running stats.
template <typename T>
ForwardResult<T> forward_at_width(GraphT<T>& g, SlimmableNetT<T>& net, int x, int g_idx,
                                  Mode mode) {
  if (g_idx < 0 || g_idx >= net.group_count())
    throw ConfigError("forward_at_width: width index " + std::to_string(g_idx) + " out of range");
  const double rho = net.widths[static_cast<size_t>(g_idx)];
  const TensorT<T>& xv = g.value(x);
  if (xv.rank() != 4 || xv.dim(1) != net.spec.in_channels || xv.dim(2) != net.spec.in_h ||
      xv.dim(3) != net.spec.in_w)
    throw ShapeError("input shape " + shape_str(xv.shape) + " does not match arch input " +
                     std::to_string(net.spec.in_channels) + "x" + std::to_string(net.spec.in_h) +
                     "x" + std::to_string(net.spec.in_w));

  auto conv_bn = [&](ConvUnitT<T>& u, int in) {
    const int act_out = active_channels(u.full_out, rho);
    int c = g.conv2d(in, g.param(&u.w), std::nullopt, u.stride, u.pad, act_out);
    return g.batchnorm2d(c, &u.bn[static_cast<size_t>(g_idx)], mode);
  };

  ForwardResult<T> res;
  int h = g.relu(conv_bn(net.stem, x));
  for (int s = 0; s < 3; ++s) {
    for (auto& blk : net.stages[static_cast<size_t>(s)]) {
      if (blk.residual) {
        int main = g.relu(conv_bn(blk.conv1, h));
        main = conv_bn(*blk.conv2, main);
        int shortcut = blk.proj ? conv_bn(*blk.proj, h) : h;
        h = g.relu(g.add(main, shortcut));
      } else {
        h = g.relu(conv_bn(blk.conv1, h));
      }
    }
    res.taps["stage" + std::to_string(s + 1)] = h;
  }
  int pooled = g.global_avg_pool(h);
  res.logits = g.linear(pooled, g.param(&net.cls_w[static_cast<size_t>(g_idx)]),
                        g.param(&net.cls_b[static_cast<size_t>(g_idx)]));
  return res;
}

// Detached forward: returns plain tensors (the knowledge fragment for rho).
template <typename T>
FragmentT<T> fragment_at_width(SlimmableNetT<T>& net, const TensorT<T>& x, int g_idx, Mode mode) {
  GraphT<T> g;
  int xin = g.constant(x);
  ForwardResult<T> fw = forward_at_width(g, net, xin, g_idx, mode);
  FragmentT<T> frag;
  frag.rho = net.widths[static_cast<size_t>(g_idx)];
  frag.logits = g.value(fw.logits);
  for (const auto& t : net.spec.tap_points) frag.features[t] = g.value(fw.taps.at(t));
  return frag;
}

// Deep-copies the leading-channel slices of every weight plus one width's
// BN/classifier into a freestanding single-width network (test oracle for
// the weight-sharing forward).
template <typename T>
SlimmableNetT<T> extract_standalone(const SlimmableNetT<T>& net, double rho) {
  SlimmableNetT<T> out;
  const int g_idx = net.width_index(rho);
  out.spec = net.spec;
  out.widths = {1.0};
  out.seed = net.seed;

  auto slice_unit = [&](const ConvUnitT<T>& u, int act_in) {
    ConvUnitT<T> s;
    const int act_out = active_channels(u.full_out, rho);
    s.full_in = act_in;
    s.full_out = act_out;
    s.stride = u.stride;
    s.pad = u.pad;
    const int K = u.w.value.dim(2);
    TensorT<T> w({act_out, act_in, K, K});
    for (int o = 0; o < act_out; ++o)
      for (int i = 0; i < act_in; ++i)
        for (int a = 0; a < K; ++a)
          for (int b = 0; b < K; ++b)
            w.data[((static_cast<size_t>(o) * act_in + i) * K + a) * K + b] =
                u.w.value.data[((static_cast<size_t>(o) * u.full_in + i) * K + a) * K + b];
    s.w = ParameterT<T>(u.w.name, std::move(w), true);
    s.bn = {u.bn[static_cast<size_t>(g_idx)]};
    return s;
  };

  out.stem = slice_unit(net.stem, net.spec.in_channels);
  int in_act = active_channels(net.stem.full_out, rho);
  out.stages.resize(3);
  for (int s = 0; s < 3; ++s) {
    for (const auto& blk : net.stages[static_cast<size_t>(s)]) {
      BlockT<T> nb;
      nb.residual = blk.residual;
      nb.conv1 = slice_unit(blk.conv1, in_act);
      const int out_act = nb.conv1.full_out;
      if (blk.conv2) nb.conv2 = slice_unit(*blk.conv2, out_act);
      if (blk.proj) nb.proj = slice_unit(*blk.proj, in_act);
      in_act = out_act;
      out.stages[static_cast<size_t>(s)].push_back(std::move(nb));
    }
  }
  const int feat = active_channels(net.spec.stage_widths()[2], rho);
  const ParameterT<T>& cw = net.cls_w[static_cast<size_t>(g_idx)];
  TensorT<T> w({net.spec.classes, feat});
  for (int c = 0; c < net.spec.classes; ++c)
    for (int f = 0; f < feat; ++f) w.at2(c, f) = cw.value.at2(c, f);
  out.cls_w.push_back(ParameterT<T>(cw.name, std::move(w), true));
  out.cls_b.push_back(net.cls_b[static_cast<size_t>(g_idx)]);
  return out;
}

// Number of parameters a rho-forward actually touches.
template <typename T>
long long param_count(const SlimmableNetT<T>& net, double rho) {
  const int g_idx = net.width_index(rho);
  long long total = 0;
  auto unit = [&](const ConvUnitT<T>& u, int act_in) {
    const int act_out = active_channels(u.full_out, rho);
    const int K = u.w.value.dim(2);
    total += static_cast<long long>(act_out) * act_in * K * K;
    total += 2LL * u.bn[static_cast<size_t>(g_idx)].channels();
    return act_out;
  };
  int in_act = unit(net.stem, net.spec.in_channels);
  for (const auto& stage : net.stages)
    for (const auto& blk : stage) {
      const int out_act = active_channels(blk.conv1.full_out, rho);
      unit(blk.conv1, in_act);
      if (blk.conv2) unit(*blk.conv2, out_act);
      if (blk.proj) unit(*blk.proj, in_act);
      in_act = out_act;
    }
  total += net.cls_w[static_cast<size_t>(g_idx)].value.numel();
  total += net.cls_b[static_cast<size_t>(g_idx)].value.numel();
  return total;
}

}  // namespace pwkd
